//! Quantum dynamics under a stochastic spatial measure.
//!
//! A state lives in `L2(M, m_t(x) dx)`. Two representations on the flat
//! space are supported: `Phi` (the flat position basis) and `chi` (the
//! lifted basis). Both are tied to the flat amplitude `u = m Phi = sqrt(m) chi`,
//! whose `L2(dx)` norm is the conserved physical norm. Each step multiplies
//! the state by the increment of the stochastic logarithm of `m^{-1}`
//! (resp. `m^{-1/2}`) and then applies a Cayley step of the Hamiltonian to
//! `u`.
//!
//! The metric demo replaces `m` by `sqrt(det g)` for a stochastic 3x3 metric
//! driven by six Wiener channels, with the logarithm increments assembled
//! from first and second derivatives of `det(g)^q`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{solve_cyclic_tridiagonal, C64, I, ZERO};
use crate::sde::StepScheme;

/// `base + amplitude cos(2 pi wavenumber x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Profile {
    pub base: f64,
    pub amplitude: f64,
    pub wavenumber: f64,
}

impl Profile {
    pub const fn constant(base: f64) -> Self {
        Self {
            base,
            amplitude: 0.0,
            wavenumber: 0.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.base + self.amplitude * (2.0 * PI * self.wavenumber * x).cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeasureModel {
    /// `dm = mu(x) dt + sigma(x) dW`.
    Generic { mu: Profile, sigma: Profile },
    /// `m = exp(xi)`, `d xi = -kappa (xi - level(x)) dt + s dW`.
    LogOu { kappa: f64, level: Profile, s: f64 },
}

impl MeasureModel {
    /// `(mu, sigma, d sigma / dm)` at point `x` with current value `m`.
    pub fn coefficients(&self, x: f64, m: f64) -> (f64, f64, f64) {
        match *self {
            MeasureModel::Generic { mu, sigma } => (mu.eval(x), sigma.eval(x), 0.0),
            MeasureModel::LogOu { kappa, level, s } => {
                let xi = m.ln();
                (m * (-kappa * (xi - level.eval(x)) + 0.5 * s * s), m * s, s)
            }
        }
    }
}

/// `low <= m <= high`; `high = inf` is the one-sided condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub low: f64,
    pub high: f64,
}

impl Bounds {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low > 0.0) || !(high >= low) {
            return Err(Error::InvalidParameter("bounds need 0 < low <= high"));
        }
        Ok(Self { low, high })
    }

    pub fn two_sided(&self) -> bool {
        self.high.is_finite()
    }

    pub fn check(&self, t: f64, index: usize, value: f64) -> Result<()> {
        if value >= self.low && value <= self.high {
            Ok(())
        } else {
            Err(Error::BoundViolation {
                t,
                index,
                value,
                low: self.low,
                high: self.high,
            })
        }
    }
}

/// The measure sampled on a uniform grid of the unit torus.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureField {
    pub points: Vec<f64>,
    pub m: Vec<f64>,
    pub bounds: Bounds,
    pub model: MeasureModel,
    pub t: f64,
}

/// Coefficients used for one field step, shared with the state update.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureIncrement {
    pub dt: f64,
    pub dw: f64,
    pub scheme: StepScheme,
    pub m_old: Vec<f64>,
    /// `(mu, sigma, d sigma/dm)` per point before the step.
    pub coeffs: Vec<(f64, f64, f64)>,
}

impl MeasureField {
    pub fn new(n: usize, model: MeasureModel, bounds: Bounds, initial: impl Fn(f64) -> f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter("grid needs at least three points"));
        }
        let points: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let m: Vec<f64> = points.iter().map(|&x| initial(x)).collect();
        for (i, &v) in m.iter().enumerate() {
            bounds.check(0.0, i, v)?;
        }
        Ok(Self {
            points,
            m,
            bounds,
            model,
            t: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Quadrature weight of each grid point.
    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// `h = sqrt(m)` on the grid.
    pub fn h(&self) -> Vec<f64> {
        self.m.iter().map(|v| v.sqrt()).collect()
    }

    /// `h^dagger = 1/sqrt(m)` on the grid.
    pub fn h_dagger(&self) -> Vec<f64> {
        self.m.iter().map(|v| 1.0 / v.sqrt()).collect()
    }

    /// `m <- m + mu dt + sigma dW` (plus the Milstein term when asked),
    /// then re-checks the bounds.
    pub fn step(&mut self, dw: f64, dt: f64, scheme: StepScheme) -> Result<MeasureIncrement> {
        if scheme == StepScheme::StratonovichMidpoint {
            return Err(Error::Unsupported("measure steps are Itô schemes"));
        }
        let coeffs: Vec<(f64, f64, f64)> = self
            .points
            .iter()
            .zip(&self.m)
            .map(|(&x, &m)| self.model.coefficients(x, m))
            .collect();
        let m_old = self.m.clone();
        let t = self.t + dt;
        let mut next = self.m.clone();
        for (i, (v, &(mu, sigma, ds))) in next.iter_mut().zip(&coeffs).enumerate() {
            *v += mu * dt + sigma * dw;
            if scheme == StepScheme::Milstein {
                *v += 0.5 * sigma * ds * (dw * dw - dt);
            }
            if !v.is_finite() {
                return Err(Error::BoundViolation {
                    t,
                    index: i,
                    value: *v,
                    low: self.bounds.low,
                    high: self.bounds.high,
                });
            }
            self.bounds.check(t, i, *v)?;
        }
        self.m = next;
        self.t = t;
        Ok(MeasureIncrement {
            dt,
            dw,
            scheme,
            m_old,
            coeffs,
        })
    }
}

/// Increment factor `1 + dLog(m^p)` for one point, from the Itô
/// coefficients of `m`:
/// `dLog(m^p) = p dm/m + p(p-1)/2 sigma^2/m^2 dt`, plus
/// `(p sigma sigma'/m + p(p-1) sigma^2/m^2)(dW^2 - dt)/2` for Milstein.
pub fn log_power_factor(p: f64, m: f64, coeffs: (f64, f64, f64), dt: f64, dw: f64, scheme: StepScheme) -> f64 {
    let (mu, sigma, ds) = coeffs;
    let s = sigma / m;
    let mut f = 1.0 + p * (mu / m) * dt + 0.5 * p * (p - 1.0) * s * s * dt + p * s * dw;
    if scheme == StepScheme::Milstein {
        f += 0.5 * (p * sigma * ds / m + p * (p - 1.0) * s * s) * (dw * dw - dt);
    }
    f
}

/// Realised `dLog(m^{-1}) + dLog(m) + d[m^{-1}, m]` for one step, which
/// vanishes identically.
pub fn log_cancellation_residual(m_old: f64, m_new: f64) -> f64 {
    let inv = (1.0 / m_new - 1.0 / m_old) * m_old;
    let direct = (m_new - m_old) / m_old;
    let bracket = (1.0 / m_new - 1.0 / m_old) * (m_new - m_old);
    inv + direct + bracket
}

/// `<h_t psi | h_s phi>` on the flat grid: `sum conj(psi) phi sqrt(m_t m_s) w`.
pub fn hk_inner_product(psi: &[C64], phi: &[C64], m_t: &[f64], m_s: &[f64], weight: f64) -> C64 {
    psi.iter()
        .zip(phi)
        .zip(m_t.iter().zip(m_s))
        .map(|((a, b), (mt, ms))| a.conj() * b * (mt * ms).sqrt())
        .sum::<C64>()
        * weight
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    /// `Phi = u / m`.
    Flat,
    /// `chi = u / sqrt(m)`.
    Hk,
}

impl Representation {
    /// Exponent `p` with state `= m^p u`.
    pub fn power(self) -> f64 {
        match self {
            Representation::Flat => -1.0,
            Representation::Hk => -0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Representation::Flat => "flat",
            Representation::Hk => "hk",
        }
    }

    /// Flat amplitude `u` from the stored state.
    pub fn to_flat(self, state: &[C64], m: &[f64]) -> Vec<C64> {
        let p = self.power();
        state.iter().zip(m).map(|(s, v)| s * v.powf(-p)).collect()
    }

    pub fn from_flat(self, u: &[C64], m: &[f64]) -> Vec<C64> {
        let p = self.power();
        u.iter().zip(m).map(|(s, v)| s * v.powf(p)).collect()
    }

    /// State for a physical wavefunction `psi` in `L2(m dx)`, where
    /// `u = sqrt(m) psi`.
    pub fn prepare(self, psi: &[C64], m: &[f64]) -> Vec<C64> {
        let u: Vec<C64> = psi.iter().zip(m).map(|(s, v)| s * v.sqrt()).collect();
        self.from_flat(&u, m)
    }

    /// `sum m^{-2p} |state|^2 w`, the conserved norm.
    pub fn physical_norm(self, state: &[C64], m: &[f64], weight: f64) -> f64 {
        let p = self.power();
        state.iter().zip(m).map(|(s, v)| s.norm_sqr() * v.powf(-2.0 * p)).sum::<f64>() * weight
    }
}

/// Flat kinetic term plus a multiplication potential on a periodic grid
/// of the unit torus in one or three dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusHamiltonian {
    pub shape: Vec<usize>,
    pub mass: f64,
    pub hbar: f64,
    pub potential: Vec<f64>,
}

impl TorusHamiltonian {
    pub fn new(shape: &[usize], mass: f64, hbar: f64, potential: Vec<f64>) -> Result<Self> {
        let total: usize = shape.iter().product();
        if potential.len() != total {
            return Err(Error::Dimension {
                expected: total,
                got: potential.len(),
            });
        }
        if shape.iter().any(|&n| n < 3) || !(mass > 0.0) || !(hbar > 0.0) {
            return Err(Error::InvalidParameter("torus Hamiltonian parameters"));
        }
        Ok(Self {
            shape: shape.to_vec(),
            mass,
            hbar,
            potential,
        })
    }

    fn stride(&self, axis: usize) -> usize {
        self.shape[axis + 1..].iter().product()
    }

    /// `H u` with the second-order finite-difference Laplacian.
    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        let mut out: Vec<C64> = u.iter().zip(&self.potential).map(|(a, v)| a * *v).collect();
        for axis in 0..self.shape.len() {
            let n = self.shape[axis];
            let h = 1.0 / n as f64;
            let c = -self.hbar * self.hbar / (2.0 * self.mass * h * h);
            let stride = self.stride(axis);
            for (idx, o) in out.iter_mut().enumerate() {
                let k = (idx / stride) % n;
                let up = if k + 1 == n { idx + stride - n * stride } else { idx + stride };
                let down = if k == 0 { idx + (n - 1) * stride } else { idx - stride };
                *o += (u[up] + u[down] - u[idx] * 2.0) * c;
            }
        }
        out
    }

    /// One unitary step of `i hbar du/dt = H u`: half potential phases around
    /// Cayley steps of the kinetic term along each axis.
    pub fn step(&self, u: &mut [C64], dt: f64) {
        let half: Vec<C64> = self
            .potential
            .iter()
            .map(|v| C64::from_polar(1.0, -0.5 * v * dt / self.hbar))
            .collect();
        u.iter_mut().zip(&half).for_each(|(a, p)| *a *= p);
        for axis in 0..self.shape.len() {
            self.kinetic_axis(u, axis, dt);
        }
        u.iter_mut().zip(&half).for_each(|(a, p)| *a *= p);
    }

    fn kinetic_axis(&self, u: &mut [C64], axis: usize, dt: f64) {
        let n = self.shape[axis];
        let h = 1.0 / n as f64;
        let c = -self.hbar * self.hbar / (2.0 * self.mass * h * h);
        // (1 + i dt/(2 hbar) T) u' = (1 - i dt/(2 hbar) T) u
        let z = I * (0.5 * dt / self.hbar);
        let off = vec![z * c; n];
        let diag = vec![C64::new(1.0, 0.0) + z * (-2.0 * c); n];
        let stride = self.stride(axis);
        let total = u.len();
        let mut line = vec![ZERO; n];
        let mut rhs = vec![ZERO; n];
        for start in 0..total {
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            for (k, l) in line.iter_mut().enumerate() {
                *l = u[start + k * stride];
            }
            for k in 0..n {
                let up = line[(k + 1) % n];
                let down = line[(k + n - 1) % n];
                rhs[k] = line[k] - z * c * (up + down - line[k] * 2.0);
            }
            let next = solve_cyclic_tridiagonal(&off, &diag, &off, &rhs);
            for (k, v) in next.into_iter().enumerate() {
                u[start + k * stride] = v;
            }
        }
    }
}

fn apply_hamiltonian_step(rep: Representation, state: &mut [C64], ham: &TorusHamiltonian, m_new: &[f64], dt: f64) {
    let mut u = rep.to_flat(state, m_new);
    ham.step(&mut u, dt);
    state.copy_from_slice(&rep.from_flat(&u, m_new));
}

/// Advances a state by one step of the field: the stochastic-logarithm
/// factor from `inc`, then the Hamiltonian, whose representation is
/// `m^{p} H m^{-p}`.
pub fn evolve_rep(
    rep: Representation,
    state: &mut [C64],
    ham: &TorusHamiltonian,
    field: &MeasureField,
    inc: &MeasureIncrement,
) -> Result<()> {
    if state.len() != field.len() {
        return Err(Error::Dimension {
            expected: field.len(),
            got: state.len(),
        });
    }
    if rep == Representation::Hk && !field.bounds.two_sided() {
        return Err(Error::Unsupported("the lifted representation needs two-sided bounds"));
    }
    let p = rep.power();
    for ((s, &m), &c) in state.iter_mut().zip(&inc.m_old).zip(&inc.coeffs) {
        *s *= log_power_factor(p, m, c, inc.dt, inc.dw, inc.scheme);
    }
    apply_hamiltonian_step(rep, state, ham, &field.m, inc.dt);
    Ok(())
}

pub fn evolve_rep_flat(phi: &mut [C64], ham: &TorusHamiltonian, field: &MeasureField, inc: &MeasureIncrement) -> Result<()> {
    evolve_rep(Representation::Flat, phi, ham, field, inc)
}

pub fn evolve_rep_hk(chi: &mut [C64], ham: &TorusHamiltonian, field: &MeasureField, inc: &MeasureIncrement) -> Result<()> {
    evolve_rep(Representation::Hk, chi, ham, field, inc)
}

/// Symmetric 3x3 matrix stored as `(00, 11, 22, 10, 20, 21)`.
pub type Sym3 = [f64; 6];

/// Index pairs `(i, j)`, `i >= j`, of the six independent components.
pub const COMPONENTS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 0), (2, 0), (2, 1)];

pub fn sym_to_matrix(s: &Sym3) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for (c, &(i, j)) in COMPONENTS.iter().enumerate() {
        m[i][j] = s[c];
        m[j][i] = s[c];
    }
    m
}

pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn inv3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let d = det3(m);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, e) = ((i + 1) % 3, (i + 2) % 3);
            r[i][j] = (m[a][c] * m[b][e] - m[a][e] * m[b][c]) / d;
        }
    }
    r
}

/// Positive definiteness via Cholesky.
pub fn is_positive_definite(m: &[[f64; 3]; 3]) -> bool {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return false;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    true
}

/// `tr(A B)` for 3x3 matrices.
fn trace_prod(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    let mut t = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            t += a[i][j] * b[j][i];
        }
    }
    t
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    r
}

/// Direction of channel `c`: `E_c` with ones at `(i,j)` and `(j,i)`.
fn unit(c: usize) -> [[f64; 3]; 3] {
    let mut e = [0.0; 6];
    e[c] = 1.0;
    sym_to_matrix(&e)
}

/// First and second logarithmic derivatives of `f(g) = det(g)^q`:
/// `Df.E/f = q tr(g^-1 E)`,
/// `D2f(E,F)/f = q^2 tr(g^-1 E) tr(g^-1 F) - q tr(g^-1 E g^-1 F)`.
#[derive(Clone, Copy, Debug)]
pub struct DetPower {
    /// `q tr(g^-1 A)` for the drift direction.
    pub drift_first: f64,
    /// `q tr(g^-1 B_c)` per channel.
    pub first: [f64; 6],
    /// `D2f(B_c, B_d)/f`.
    pub second: [[f64; 6]; 6],
}

impl DetPower {
    pub fn new(q: f64, g: &Sym3, alpha: &Sym3, beta: &Sym3) -> Self {
        let gi = inv3(&sym_to_matrix(g));
        let a = sym_to_matrix(alpha);
        let dirs: [[[f64; 3]; 3]; 6] = core::array::from_fn(|c| {
            let mut e = unit(c);
            for row in e.iter_mut() {
                for v in row.iter_mut() {
                    *v *= beta[c];
                }
            }
            matmul3(&gi, &e)
        });
        let tr: [f64; 6] = core::array::from_fn(|c| (0..3).map(|i| dirs[c][i][i]).sum());
        let mut second = [[0.0; 6]; 6];
        for c in 0..6 {
            for d in 0..6 {
                second[c][d] = q * q * tr[c] * tr[d] - q * trace_prod(&dirs[c], &dirs[d]);
            }
        }
        Self {
            drift_first: q * trace_prod(&gi, &a),
            first: tr.map(|t| q * t),
            second,
        }
    }

    /// Itô drift and per-channel diffusion of `dLog(f)`.
    pub fn log_coefficients(&self) -> (f64, [f64; 6]) {
        let ito: f64 = (0..6).map(|c| self.second[c][c]).sum::<f64>();
        (self.drift_first + 0.5 * ito, self.first)
    }
}

/// `sum_{ij} g^{ij} x_ij` over all nine index pairs.
pub fn contraction(g: &Sym3, x: &Sym3) -> f64 {
    trace_prod(&inv3(&sym_to_matrix(g)), &sym_to_matrix(x))
}

/// Drift and per-channel diffusion of `sqrt(det g)` by the Itô formula.
pub fn volume_sde(g: &Sym3, alpha: &Sym3, beta: &Sym3) -> (f64, [f64; 6]) {
    let s = det3(&sym_to_matrix(g)).sqrt();
    let d = DetPower::new(0.5, g, alpha, beta);
    let ito: f64 = (0..6).map(|c| d.second[c][c]).sum::<f64>();
    (s * (d.drift_first + 0.5 * ito), d.first.map(|v| s * v))
}

/// The single-noise form
/// `d sqrt g = sqrt g / 2 {[g^ij alpha_ij - (g^ij beta_ij)^2/4] dt + g^ij beta_ij dW}`;
/// returns `(drift, diffusion)`.
pub fn volume_sde_single_noise(g: &Sym3, alpha: &Sym3, beta: &Sym3) -> (f64, f64) {
    let s = det3(&sym_to_matrix(g)).sqrt();
    let ta = contraction(g, alpha);
    let tb = contraction(g, beta);
    (0.5 * s * (ta - 0.25 * tb * tb), 0.5 * s * tb)
}

/// Which noise coefficient multiplies the state in the manifold SDEs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseCoefficient {
    /// Assembled from derivatives of `det(g)^q` by the Itô formula.
    Derived,
    /// `+g^ij beta_ij` with the accompanying closed-form drifts.
    Printed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricModel {
    pub alpha: Sym3,
    pub beta: Sym3,
    /// Relative spatial modulation `1 + modulation cos(2 pi (x + y + z))`.
    pub modulation: f64,
}

impl MetricModel {
    fn envelope(&self, x: [f64; 3]) -> f64 {
        1.0 + self.modulation * (2.0 * PI * (x[0] + x[1] + x[2])).cos()
    }

    pub fn alpha_at(&self, x: [f64; 3]) -> Sym3 {
        let e = self.envelope(x);
        self.alpha.map(|v| v * e)
    }

    pub fn beta_at(&self, x: [f64; 3]) -> Sym3 {
        let e = self.envelope(x);
        self.beta.map(|v| v * e)
    }
}

pub const IDENTITY_METRIC: Sym3 = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];

/// A stochastic metric sampled on a periodic 3D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField {
    pub shape: [usize; 3],
    pub g: Vec<Sym3>,
    pub sqrt_det: Vec<f64>,
    pub model: MetricModel,
    /// Bounds on `sqrt(det g)`.
    pub bounds: Bounds,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricIncrement {
    pub dt: f64,
    pub dw: [f64; 6],
    pub g_old: Vec<Sym3>,
    pub alpha: Vec<Sym3>,
    pub beta: Vec<Sym3>,
}

impl MetricField {
    pub fn new(shape: [usize; 3], model: MetricModel, bounds: Bounds, initial: impl Fn([f64; 3]) -> Sym3) -> Result<Self> {
        let mut f = Self {
            shape,
            g: Vec::new(),
            sqrt_det: Vec::new(),
            model,
            bounds,
            t: 0.0,
        };
        f.g = f.points().into_iter().map(initial).collect();
        f.refresh()?;
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Grid coordinates in row-major order (last axis fastest).
    pub fn points(&self) -> Vec<[f64; 3]> {
        let [a, b, c] = self.shape;
        let mut out = Vec::with_capacity(a * b * c);
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    out.push([i as f64 / a as f64, j as f64 / b as f64, k as f64 / c as f64]);
                }
            }
        }
        out
    }

    fn refresh(&mut self) -> Result<()> {
        self.sqrt_det.clear();
        for (i, g) in self.g.iter().enumerate() {
            let m = sym_to_matrix(g);
            if !is_positive_definite(&m) {
                return Err(Error::NotPositiveDefinite { t: self.t, index: i });
            }
            let s = det3(&m).sqrt();
            self.bounds.check(self.t, i, s)?;
            self.sqrt_det.push(s);
        }
        Ok(())
    }

    /// `g_ij <- g_ij + alpha_ij dt + beta_ij dW^(ij)` for the six independent
    /// components. The noise is additive, so this is also the Milstein step.
    pub fn step(&mut self, dw: [f64; 6], dt: f64) -> Result<MetricIncrement> {
        let pts = self.points();
        let alpha: Vec<Sym3> = pts.iter().map(|&x| self.model.alpha_at(x)).collect();
        let beta: Vec<Sym3> = pts.iter().map(|&x| self.model.beta_at(x)).collect();
        let g_old = self.g.clone();
        for ((g, a), b) in self.g.iter_mut().zip(&alpha).zip(&beta) {
            for c in 0..6 {
                g[c] += a[c] * dt + b[c] * dw[c];
            }
        }
        self.t += dt;
        if let Err(e) = self.refresh() {
            self.g = g_old;
            self.t -= dt;
            self.refresh()?;
            return Err(e);
        }
        Ok(MetricIncrement {
            dt,
            dw,
            g_old,
            alpha,
            beta,
        })
    }
}

/// `1 + dLog(sqrt(det g)^p)` at one point for the chosen coefficient set.
#[allow(clippy::too_many_arguments)]
pub fn metric_log_factor(
    rep: Representation,
    g: &Sym3,
    alpha: &Sym3,
    beta: &Sym3,
    dt: f64,
    dw: &[f64; 6],
    coefficient: NoiseCoefficient,
    scheme: StepScheme,
) -> f64 {
    match coefficient {
        NoiseCoefficient::Derived => {
            let d = DetPower::new(0.5 * rep.power(), g, alpha, beta);
            let (drift, diff) = d.log_coefficients();
            let mut f = 1.0 + drift * dt + (0..6).map(|c| diff[c] * dw[c]).sum::<f64>();
            if scheme == StepScheme::Milstein {
                for c in 0..6 {
                    for e in 0..6 {
                        let q = dw[c] * dw[e] - if c == e { dt } else { 0.0 };
                        f += 0.5 * d.second[c][e] * q;
                    }
                }
            }
            f
        }
        NoiseCoefficient::Printed => {
            let ta = contraction(g, alpha);
            let tb = contraction(g, beta);
            let gi = inv3(&sym_to_matrix(g));
            let noise: f64 = (0..6).map(|c| beta[c] * trace_prod(&gi, &unit(c)) * dw[c]).sum();
            let drift = match rep {
                Representation::Flat => -0.5 * ta + 0.375 * tb * tb,
                Representation::Hk => {
                    let hd = det3(&sym_to_matrix(g)).powf(-0.25);
                    -hd.powi(3) / 4.0 * (ta - (1.0 + 1.5 * hd * hd) * tb * tb / 4.0)
                }
            };
            1.0 + drift * dt + noise
        }
    }
}

/// One step of the state on the stochastic manifold.
#[allow(clippy::too_many_arguments)]
pub fn evolve_manifold(
    rep: Representation,
    state: &mut [C64],
    ham: &TorusHamiltonian,
    field: &MetricField,
    inc: &MetricIncrement,
    coefficient: NoiseCoefficient,
    scheme: StepScheme,
) -> Result<()> {
    if state.len() != field.len() {
        return Err(Error::Dimension {
            expected: field.len(),
            got: state.len(),
        });
    }
    if rep == Representation::Hk && !field.bounds.two_sided() {
        return Err(Error::Unsupported("the lifted representation needs two-sided bounds"));
    }
    for (i, s) in state.iter_mut().enumerate() {
        *s *= metric_log_factor(rep, &inc.g_old[i], &inc.alpha[i], &inc.beta[i], inc.dt, &inc.dw, coefficient, scheme);
    }
    apply_hamiltonian_step(rep, state, ham, &field.sqrt_det, inc.dt);
    Ok(())
}

pub fn evolve_manifold_flat(
    phi: &mut [C64],
    ham: &TorusHamiltonian,
    field: &MetricField,
    inc: &MetricIncrement,
    coefficient: NoiseCoefficient,
) -> Result<()> {
    evolve_manifold(Representation::Flat, phi, ham, field, inc, coefficient, StepScheme::Milstein)
}

pub fn evolve_manifold_hk(
    chi: &mut [C64],
    ham: &TorusHamiltonian,
    field: &MetricField,
    inc: &MetricIncrement,
    coefficient: NoiseCoefficient,
) -> Result<()> {
    evolve_manifold(Representation::Hk, chi, ham, field, inc, coefficient, StepScheme::Milstein)
}

/// `sum f(x) |u|^2 / sum |u|^2` for the flat amplitude of a state.
pub fn physical_expectation(rep: Representation, state: &[C64], m: &[f64], f: &[f64]) -> f64 {
    let u = rep.to_flat(state, m);
    let total: f64 = u.iter().map(|v| v.norm_sqr()).sum();
    u.iter().zip(f).map(|(v, w)| v.norm_sqr() * w).sum::<f64>() / total
}

/// Periodic Gaussian packet `exp(-d^2/(2 w^2)) exp(2 pi i k x)` on the unit
/// torus, per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Packet {
    pub center: f64,
    pub width: f64,
    pub wavenumber: f64,
}

impl Packet {
    pub fn eval(&self, x: f64) -> C64 {
        let mut d = x - self.center;
        d -= (d + 0.5).floor();
        C64::from_polar((-d * d / (2.0 * self.width * self.width)).exp(), 2.0 * PI * self.wavenumber * x)
    }
}

/// Physical wavefunction normalised in `L2(m dx)`.
fn normalised_packet(values: Vec<C64>, m: &[f64], weight: f64) -> Vec<C64> {
    let n: f64 = values.iter().zip(m).map(|(v, w)| v.norm_sqr() * w).sum::<f64>() * weight;
    let s = 1.0 / n.sqrt();
    values.into_iter().map(|v| v * s).collect()
}

/// Both representations driven by one noise path on the 1D torus.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureDemo {
    pub points: usize,
    pub model: MeasureModel,
    pub bounds: Bounds,
    pub initial: Profile,
    pub packet: Packet,
    pub mass: f64,
    pub hbar: f64,
    pub potential: Profile,
    pub dt: f64,
    pub steps: u64,
    pub scheme: StepScheme,
    pub record_every: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureRecord {
    pub step: u64,
    pub t: f64,
    pub norm_flat: f64,
    pub norm_hk: f64,
    /// `<cos 2 pi x>` from each representation.
    pub observable_flat: f64,
    pub observable_hk: f64,
    pub m_min: f64,
    pub m_max: f64,
    /// Largest stochastic-logarithm cancellation residual of the step.
    pub cancellation: f64,
}

#[derive(Clone, Debug)]
pub struct MeasureRun {
    pub records: Vec<MeasureRecord>,
    pub phi: Vec<C64>,
    pub chi: Vec<C64>,
    pub field: MeasureField,
    pub abort: Option<Error>,
}

impl MeasureRun {
    /// Largest relative deviation of the physical norm from its start.
    pub fn norm_drift(&self, rep: Representation) -> f64 {
        let pick = |r: &MeasureRecord| match rep {
            Representation::Flat => r.norm_flat,
            Representation::Hk => r.norm_hk,
        };
        let n0 = self.records.first().map(pick).unwrap_or(1.0);
        self.records.iter().map(|r| (pick(r) / n0 - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest gap between the two representations' observable.
    pub fn duality_gap(&self) -> f64 {
        self.records
            .iter()
            .map(|r| (r.observable_flat - r.observable_hk).abs())
            .fold(0.0, f64::max)
    }
}

pub fn run_measure_demo(demo: &MeasureDemo, noise: &crate::sde::NoiseSource) -> Result<MeasureRun> {
    if noise.dt() != demo.dt {
        return Err(Error::InvalidParameter("noise and demo dt differ"));
    }
    let mut field = MeasureField::new(demo.points, demo.model, demo.bounds, |x| demo.initial.eval(x))?;
    let potential: Vec<f64> = field.points.iter().map(|&x| demo.potential.eval(x)).collect();
    let ham = TorusHamiltonian::new(&[demo.points], demo.mass, demo.hbar, potential)?;
    let w = field.weight();
    let psi = normalised_packet(field.points.iter().map(|&x| demo.packet.eval(x)).collect(), &field.m, w);
    let mut phi = Representation::Flat.prepare(&psi, &field.m);
    let mut chi = Representation::Hk.prepare(&psi, &field.m);
    let cosine: Vec<f64> = field.points.iter().map(|&x| (2.0 * PI * x).cos()).collect();
    let every = demo.record_every.max(1);
    let mut stream = noise.stream(0);
    let mut records = Vec::new();
    let mut abort = None;
    let mut cancellation = 0.0;
    for step in 0..=demo.steps {
        if step % every == 0 || step == demo.steps {
            let m = &field.m;
            records.push(MeasureRecord {
                step,
                t: field.t,
                norm_flat: Representation::Flat.physical_norm(&phi, m, w),
                norm_hk: Representation::Hk.physical_norm(&chi, m, w),
                observable_flat: physical_expectation(Representation::Flat, &phi, m, &cosine),
                observable_hk: physical_expectation(Representation::Hk, &chi, m, &cosine),
                m_min: m.iter().copied().fold(f64::INFINITY, f64::min),
                m_max: m.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                cancellation,
            });
        }
        if step == demo.steps {
            break;
        }
        let dw = stream.next_increment();
        let result = field.step(dw, demo.dt, demo.scheme).and_then(|inc| {
            evolve_rep_flat(&mut phi, &ham, &field, &inc)?;
            if field.bounds.two_sided() {
                evolve_rep_hk(&mut chi, &ham, &field, &inc)?;
            }
            Ok(inc)
        });
        match result {
            Ok(inc) => {
                cancellation = inc
                    .m_old
                    .iter()
                    .zip(&field.m)
                    .map(|(&a, &b)| log_cancellation_residual(a, b).abs())
                    .fold(0.0, f64::max);
            }
            Err(e) => {
                abort = Some(e);
                break;
            }
        }
    }
    Ok(MeasureRun {
        records,
        phi,
        chi,
        field,
        abort,
    })
}

/// Particle on a stochastic 3D torus metric.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldDemo {
    pub shape: [usize; 3],
    pub model: MetricModel,
    pub bounds: Bounds,
    /// Relative amplitude of the initial diagonal metric modulation.
    pub initial_modulation: f64,
    pub packet: Packet,
    pub mass: f64,
    pub hbar: f64,
    /// `V = amplitude (cos 2 pi x + cos 2 pi y + cos 2 pi z)`.
    pub potential: f64,
    pub dt: f64,
    pub steps: u64,
    pub representation: Representation,
    pub coefficient: NoiseCoefficient,
    pub scheme: StepScheme,
    pub record_every: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManifoldRecord {
    pub step: u64,
    pub t: f64,
    pub norm: f64,
    pub sqrt_det_min: f64,
    pub sqrt_det_max: f64,
}

#[derive(Clone, Debug)]
pub struct ManifoldRun {
    pub records: Vec<ManifoldRecord>,
    pub state: Vec<C64>,
    pub field: MetricField,
    pub abort: Option<Error>,
}

impl ManifoldRun {
    pub fn norm_drift(&self) -> f64 {
        let n0 = self.records.first().map(|r| r.norm).unwrap_or(1.0);
        self.records.iter().map(|r| (r.norm / n0 - 1.0).abs()).fold(0.0, f64::max)
    }
}

pub fn run_manifold_demo(demo: &ManifoldDemo, noise: &crate::sde::NoiseSource) -> Result<ManifoldRun> {
    if noise.dt() != demo.dt || noise.channels() != 6 {
        return Err(Error::InvalidParameter("manifold noise needs six channels at the demo dt"));
    }
    let a = demo.initial_modulation;
    let mut field = MetricField::new(demo.shape, demo.model, demo.bounds, |x| {
        let s = 1.0 + a * (2.0 * PI * x[0]).cos();
        [s, 1.0, 1.0 + a * (2.0 * PI * x[2]).sin(), 0.0, 0.0, 0.0]
    })?;
    let pts = field.points();
    let potential: Vec<f64> = pts
        .iter()
        .map(|x| demo.potential * x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>())
        .collect();
    let ham = TorusHamiltonian::new(&demo.shape, demo.mass, demo.hbar, potential)?;
    let w = field.weight();
    let raw: Vec<C64> = pts
        .iter()
        .map(|x| demo.packet.eval(x[0]) * demo.packet.eval(x[1]) * demo.packet.eval(x[2]))
        .collect();
    let psi = normalised_packet(raw, &field.sqrt_det, w);
    let rep = demo.representation;
    let mut state = rep.prepare(&psi, &field.sqrt_det);
    let mut streams = noise.streams();
    let mut dw = [0.0; 6];
    let every = demo.record_every.max(1);
    let mut records = Vec::new();
    let mut abort = None;
    for step in 0..=demo.steps {
        if step % every == 0 || step == demo.steps {
            let s = &field.sqrt_det;
            records.push(ManifoldRecord {
                step,
                t: field.t,
                norm: rep.physical_norm(&state, s, w),
                sqrt_det_min: s.iter().copied().fold(f64::INFINITY, f64::min),
                sqrt_det_max: s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
        if step == demo.steps {
            break;
        }
        streams.next_into(&mut dw);
        let result = field
            .step(dw, demo.dt)
            .and_then(|inc| evolve_manifold(rep, &mut state, &ham, &field, &inc, demo.coefficient, demo.scheme));
        if let Err(e) = result {
            abort = Some(e);
            break;
        }
    }
    Ok(ManifoldRun {
        records,
        state,
        field,
        abort,
    })
}
