//! Numerics for unitary quantum dynamics on stochastically time-dependent
//! Hilbert spaces.
//!
//! Two settings are covered:
//!
//! * a particle confined to an interval `[a_t, b_t]` whose endpoints are
//!   diffusion processes ([`boundary`], [`frame`], [`evolution`],
//!   [`observables`]), mapped onto the fixed interval `[-1/2, 1/2]` by a
//!   translation followed by a dilation;
//! * a particle whose integration measure `m_t(x) dx` (or Riemannian volume
//!   element `sqrt(g) d^3x`) evolves stochastically ([`measure`]).
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and
//! the command-line driver live in the `stochframe` companion crate.

#![no_std]
#![allow(
    clippy::many_single_char_names,
    clippy::needless_range_loop,
    clippy::excessive_precision,
    // `!(x > 0.0)` also rejects NaN.
    clippy::neg_cmp_op_on_partial_ord
)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod boundary;
pub mod error;
pub mod evolution;
pub mod frame;
pub mod linalg;
pub mod measure;
pub mod observables;
pub mod quadrature;
pub mod reference;
pub mod sde;

pub use error::{Error, Result};
pub use linalg::{CMatrix, C64};

/// Physical constants shared by every model. All default to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Units {
    /// Reduced Planck constant.
    pub hbar: f64,
    /// Reference length used to make the interval length dimensionless.
    pub l0: f64,
    /// Particle mass.
    pub mass: f64,
    /// Boltzmann constant.
    pub k_b: f64,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            hbar: 1.0,
            l0: 1.0,
            mass: 1.0,
            k_b: 1.0,
        }
    }
}
