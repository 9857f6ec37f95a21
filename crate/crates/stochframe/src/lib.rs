//! Driver layer over `stochframe-core`: TOML experiment configs, output
//! bundles with stable hashes, a parallel ensemble runner, the acceptance
//! checks and the `stochframe` command line.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod config;
pub mod crossval;
pub mod ensemble;
pub mod error;
pub mod formats;
pub mod scenario;
pub mod validate;

pub use config::{ExperimentConfig, Format, Scenario};
pub use error::{HarnessError, Result};
