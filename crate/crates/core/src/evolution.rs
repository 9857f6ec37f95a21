//! Time stepping of the state in the co-moving frame.
//!
//! Three integrators share one set of factored operators
//! ([`FrameOperators`]): an Itô stepper for the stochastic Schrödinger
//! equation (Euler–Maruyama or a symmetric Milstein variant), a unitary
//! Stratonovich stepper that exponentiates the generator evaluated at the
//! midpoint frame, and a stepper for the density-matrix map.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::boundary::{BoundaryStepper, FrameState};
use crate::error::{Error, Result};
use crate::frame::{Assembler, Basis, Drive, Frame, FrameOperators};
use crate::linalg::{expm_action, norm_sqr, re, CMatrix, C64, I, ZERO};
use crate::sde::NoiseSource;

/// Default per-step drift allowance, in units of `dt`.
pub const DRIFT_FACTOR: f64 = 10.0;

/// Coefficients of a pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub coeffs: Vec<C64>,
    pub t: f64,
}

impl StateVector {
    pub fn new(coeffs: Vec<C64>) -> Self {
        Self { coeffs, t: 0.0 }
    }

    /// Basis vector `j` of an `n`-dimensional space.
    pub fn basis_vector(n: usize, j: usize) -> Self {
        let mut coeffs = vec![ZERO; n];
        coeffs[j] = re(1.0);
        Self::new(coeffs)
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.coeffs)
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            let inv = 1.0 / n;
            self.coeffs.iter_mut().for_each(|c| *c *= inv);
        }
    }

    /// `<phi|A|phi> / <phi|phi>`.
    pub fn expect(&self, a: &CMatrix) -> f64 {
        a.expectation(&self.coeffs).re / self.norm_sqr()
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix {
            entries: CMatrix::outer(&self.coeffs, &self.coeffs),
            t: self.t,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub entries: CMatrix,
    pub t: f64,
}

impl DensityMatrix {
    pub fn maximally_mixed(n: usize) -> Self {
        let mut entries = CMatrix::identity(n);
        entries = entries.scale_re(1.0 / n as f64);
        Self { entries, t: 0.0 }
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    /// Checks hermiticity, unit trace within `trace_tol` and a spectrum
    /// bounded below by `-1e-8`.
    pub fn validate(&self, trace_tol: f64) -> Result<()> {
        let defect = self.entries.hermiticity_defect();
        if defect > 1e-12 {
            return Err(Error::NonHermitian {
                label: "density matrix",
                defect,
            });
        }
        let drift = (self.trace() - 1.0).abs();
        if drift > trace_tol {
            return Err(Error::Instability {
                scheme: "density",
                drift,
                limit: trace_tol,
            });
        }
        let eig = crate::linalg::eigh(&self.entries.hermitian_part())?;
        if eig.values.first().is_some_and(|&v| v < -1e-8) {
            return Err(Error::Positivity { value: eig.values[0] });
        }
        Ok(())
    }
}

/// Itô discretisation of the state equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ItoOrder {
    #[default]
    EulerMaruyama,
    /// Adds `1/2 B^2 (dW dW - dt)` with `B` the noise operator; exact for
    /// commuting channels, drops the Lévy area otherwise.
    Milstein,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EvolutionScheme {
    #[default]
    Ito,
    ItoMilstein,
    StratonovichUnitary,
}

impl EvolutionScheme {
    pub fn name(self) -> &'static str {
        match self {
            EvolutionScheme::Ito => "ito",
            EvolutionScheme::ItoMilstein => "ito-milstein",
            EvolutionScheme::StratonovichUnitary => "stratonovich",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub horizon: f64,
    pub scheme: EvolutionScheme,
    pub renormalize: bool,
    /// Per-step norm drift allowance in units of `dt`.
    pub drift_factor: f64,
}

impl EvolutionConfig {
    pub fn new(dt: f64, horizon: f64, scheme: EvolutionScheme) -> Result<Self> {
        let cfg = Self {
            dt,
            horizon,
            scheme,
            renormalize: false,
            drift_factor: DRIFT_FACTOR,
        };
        cfg.steps()?;
        Ok(cfg)
    }

    /// Number of steps; the horizon must be an integer multiple of `dt`.
    pub fn steps(&self) -> Result<u64> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter("dt must be positive"));
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::InvalidParameter("horizon must be non-negative"));
        }
        let n = (self.horizon / self.dt).round();
        if (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon.max(self.dt) {
            return Err(Error::InvalidParameter("horizon must be a multiple of dt"));
        }
        Ok(n as u64)
    }
}

/// Noise operator `B = sum_k i (c_k / hbar) F_k dW_k` written as
/// `i (alpha P + beta G)`.
fn noise_coeffs(ops: &FrameOperators<'_>, dw: [f64; 2]) -> (f64, f64) {
    let mut alpha = 0.0;
    let mut beta = 0.0;
    for ch in 0..2 {
        let w = ops.coupling[ch] / ops.hbar * dw[ch];
        alpha += 0.5 * w;
        beta += ops.f_g_coeff(ch) * w;
    }
    (alpha, beta)
}

/// `sum_k (c_k/hbar)^2 F_k^2` as coefficients of `(PP, PG+GP, GG)`.
fn correction_coeffs(ops: &FrameOperators<'_>) -> [f64; 3] {
    let mut out = [0.0; 3];
    for ch in 0..2 {
        let c2 = (ops.coupling[ch] / ops.hbar).powi(2);
        let e = ops.f_g_coeff(ch);
        out[0] += 0.25 * c2;
        out[1] += 0.5 * e * c2;
        out[2] += e * e * c2;
    }
    out
}

fn apply_noise(ops: &FrameOperators<'_>, alpha: f64, beta: f64, v: &[C64]) -> Vec<C64> {
    let p = ops.p().apply(v);
    let g = ops.g().apply(v);
    p.iter().zip(&g).map(|(p, g)| I * (p * alpha + g * beta)).collect()
}

fn check_drift(scheme: &'static str, before: f64, after: f64, limit: f64) -> Result<()> {
    let drift = (after - before).abs();
    if !(drift <= limit) {
        return Err(Error::Instability { scheme, drift, limit });
    }
    Ok(())
}

/// One Itô step of the state equation
/// `d phi = -(i/hbar) H' phi dt + sum_k [i c_k/hbar F_k phi dW_k - c_k^2/(2 hbar^2) F_k^2 phi dt]`
/// with `c_k = sigma_k / len`.
pub fn ito_sse_step(
    state: &mut StateVector,
    ops: &FrameOperators<'_>,
    dw: [f64; 2],
    dt: f64,
    order: ItoOrder,
    drift_factor: f64,
) -> Result<()> {
    let phi = &state.coeffs;
    let before = norm_sqr(phi);
    let [k, p, g] = ops.apply_kpg(phi);
    let (alpha, beta) = noise_coeffs(ops, dw);
    let h = -I / ops.hbar * dt;
    let noise: Vec<C64> = (0..phi.len()).map(|i| I * (p[i] * alpha + g[i] * beta)).collect();
    let mut next: Vec<C64> = (0..phi.len())
        .map(|i| phi[i] + (k[i] + p[i] * ops.p_coeff + g[i] * ops.g_coeff) * h + noise[i])
        .collect();
    match order {
        ItoOrder::EulerMaruyama => {
            let [cpp, cpg, cgg] = correction_coeffs(ops);
            let pp = ops.pp().apply(phi);
            let pg = ops.pg_gp().apply(phi);
            let gg = ops.gg().apply(phi);
            for i in 0..next.len() {
                next[i] += (pp[i] * cpp + pg[i] * cpg + gg[i] * cgg) * (-0.5 * dt);
            }
        }
        ItoOrder::Milstein => {
            // The Itô correction -1/2 sum_k c_k^2 F_k^2 dt cancels against the
            // dt part of 1/2 B^2 (dW dW - dt), leaving 1/2 B^2.
            let b2 = apply_noise(ops, alpha, beta, &noise);
            for (n, v) in next.iter_mut().zip(&b2) {
                *n += v * 0.5;
            }
        }
    }
    check_drift("ito", before, norm_sqr(&next), drift_factor * dt)?;
    state.coeffs = next;
    state.t += dt;
    Ok(())
}

/// One unitary step `phi <- exp(A) phi`, `A` the Stratonovich generator
/// built from operators evaluated at the midpoint frame.
pub fn stratonovich_unitary_step(
    state: &mut StateVector,
    ops_mid: &FrameOperators<'_>,
    dw: [f64; 2],
    dt: f64,
) -> Result<()> {
    let a = ops_mid.stratonovich_generator(dt, dw);
    // A = -(i/hbar) H_total, so A + A^dagger measures the non-hermitian part.
    let defect = (&a + &a.adjoint()).max_abs();
    if defect > 1e-12 * a.max_abs().max(1.0) {
        return Err(Error::NonHermitian {
            label: "stratonovich generator",
            defect,
        });
    }
    state.coeffs = expm_action(&a, &state.coeffs);
    state.t += dt;
    Ok(())
}

/// Lindblad-type generator with the current coefficients applied to `rho`.
pub fn lindblad(ops: &FrameOperators<'_>, rho: &CMatrix) -> CMatrix {
    let h = ops.h_eff();
    let mut out = h.commutator(rho).scale(-I / ops.hbar);
    for ch in 0..2 {
        let c2 = (ops.coupling[ch] / ops.hbar).powi(2);
        if c2 == 0.0 {
            continue;
        }
        let f = ops.f(ch);
        let f2 = ops.f_sq(ch);
        let mut d = f.matmul(rho).matmul(&f);
        d.add_scaled(re(-0.5), &f2.anticommutator(rho));
        out.add_scaled(re(c2), &d);
    }
    out
}

/// Noise superoperator `sum_k i (c_k/hbar) [F_k, rho] dW_k`.
fn density_noise(ops: &FrameOperators<'_>, alpha: f64, beta: f64, rho: &CMatrix) -> CMatrix {
    let mut gen = ops.p().scale_re(alpha);
    gen.add_scaled(re(beta), ops.g());
    gen.commutator(rho).scale(I)
}

/// One step of the density-matrix map
/// `d rho = L(rho) dt + sum_k i c_k/hbar [F_k, rho] dW_k`.
pub fn density_step(
    rho: &mut DensityMatrix,
    ops: &FrameOperators<'_>,
    dw: [f64; 2],
    dt: f64,
    order: ItoOrder,
    drift_factor: f64,
) -> Result<()> {
    let before = rho.trace();
    let (alpha, beta) = noise_coeffs(ops, dw);
    let mut next = rho.entries.clone();
    let b1 = density_noise(ops, alpha, beta, &rho.entries);
    match order {
        ItoOrder::EulerMaruyama => next.add_scaled(re(dt), &lindblad(ops, &rho.entries)),
        ItoOrder::Milstein => {
            // The dissipator cancels against the dt part of the second-order
            // noise term, leaving the commutator and 1/2 B(B(rho)).
            let h = ops.h_eff();
            next.add_scaled(-I / ops.hbar * dt, &h.commutator(&rho.entries));
            next.add_scaled(re(0.5), &density_noise(ops, alpha, beta, &b1));
        }
    }
    next += &b1;
    let after = next.trace().re;
    check_drift("density", before, after, drift_factor * dt)?;
    rho.entries = next;
    rho.t += dt;
    Ok(())
}

/// Samples `psi(y) = phi((y - m)/len) / sqrt(len)` on `grid`.
pub fn map_back(basis: &Basis, coeffs: &[C64], frame: Frame, grid: &[f64]) -> Result<Vec<C64>> {
    if !(frame.len > 0.0) {
        return Err(Error::InvalidParameter("frame length must be positive"));
    }
    let lo = frame.m - 0.5 * frame.len;
    let hi = frame.m + 0.5 * frame.len;
    let slack = 1e-12 * frame.len;
    let scale = 1.0 / frame.len.sqrt();
    grid.iter()
        .map(|&y| {
            if y < lo - slack || y > hi + slack {
                return Err(Error::Domain { y, a: lo, b: hi });
            }
            let x = ((y - frame.m) / frame.len).clamp(-0.5, 0.5);
            Ok(basis.eval(coeffs, 0, x) * scale)
        })
        .collect()
}

/// One row of a state trajectory. Position and momentum are physical
/// expectations, i.e. of `len X + m` and `P / len`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateRecord {
    pub step: u64,
    pub t: f64,
    pub norm: f64,
    pub position: f64,
    pub momentum: f64,
    pub energy: f64,
    pub l: f64,
    pub m: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<StateRecord>,
    pub snapshots: Vec<(u64, Vec<C64>)>,
    pub state: StateVector,
    pub frame: FrameState,
    pub abort: Option<Error>,
}

/// Output cadence of [`evolve`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Recording {
    pub every: u64,
    /// Full coefficient snapshots every this many steps (0 disables them).
    pub snapshot_every: u64,
}

impl Default for Recording {
    fn default() -> Self {
        Self {
            every: 1,
            snapshot_every: 0,
        }
    }
}

fn record(asm: &Assembler, step: u64, state: &StateVector, fs: &FrameState, ops: &FrameOperators<'_>) -> StateRecord {
    let len = fs.length();
    StateRecord {
        step,
        t: fs.t,
        norm: state.norm_sqr().sqrt(),
        position: len * state.expect(asm.x()) + fs.m,
        momentum: state.expect(asm.p()) / len,
        energy: state.expect(&ops.h_eff()),
        l: fs.l,
        m: fs.m,
    }
}

/// Steps the boundary and the state together, feeding the same increments
/// to both. Failures end the run early and are reported in
/// [`Trajectory::abort`].
pub fn evolve(
    asm: &Assembler,
    boundary: &BoundaryStepper,
    frame: FrameState,
    state: StateVector,
    noise: &NoiseSource,
    cfg: &EvolutionConfig,
    rec: Recording,
) -> Result<Trajectory> {
    let steps = cfg.steps()?;
    if noise.dt() != cfg.dt {
        return Err(Error::InvalidParameter("noise and evolution dt differ"));
    }
    if state.dim() != asm.basis().dim() {
        return Err(Error::Dimension {
            expected: asm.basis().dim(),
            got: state.dim(),
        });
    }
    let mut out = Trajectory {
        records: Vec::new(),
        snapshots: Vec::new(),
        state,
        frame,
        abort: None,
    };
    let mut streams = noise.streams();
    let mut dw = vec![0.0; noise.channels().max(2)];
    let every = rec.every.max(1);
    for step in 0..=steps {
        let fs = out.frame;
        let ops = match asm.effective(Frame::from_state(&fs), Drive::at(&boundary.model, &fs)) {
            Ok(o) => o,
            Err(e) => {
                out.abort = Some(e);
                break;
            }
        };
        if step % every == 0 || step == steps {
            out.records.push(record(asm, step, &out.state, &fs, &ops));
        }
        if rec.snapshot_every > 0 && step % rec.snapshot_every == 0 {
            out.snapshots.push((step, out.state.coeffs.clone()));
        }
        if step == steps {
            break;
        }
        streams.next_into(&mut dw[..noise.channels()]);
        let inc = [dw[0], dw[1]];
        let result = advance(asm, boundary, &fs, &ops, &mut out.state, inc, cfg);
        match result {
            Ok(next) => out.frame = next,
            Err(e) => {
                out.abort = Some(e);
                break;
            }
        }
    }
    Ok(out)
}

fn advance(
    asm: &Assembler,
    boundary: &BoundaryStepper,
    fs: &FrameState,
    ops: &FrameOperators<'_>,
    state: &mut StateVector,
    dw: [f64; 2],
    cfg: &EvolutionConfig,
) -> Result<FrameState> {
    let (next, _) = boundary.step(fs, dw[0], dw[1], cfg.dt)?;
    match cfg.scheme {
        EvolutionScheme::Ito | EvolutionScheme::ItoMilstein => {
            let order = if cfg.scheme == EvolutionScheme::Ito {
                ItoOrder::EulerMaruyama
            } else {
                ItoOrder::Milstein
            };
            ito_sse_step(state, ops, dw, cfg.dt, order, cfg.drift_factor)?;
            if cfg.renormalize {
                state.normalize();
            }
        }
        EvolutionScheme::StratonovichUnitary => {
            let mid = boundary.half_step(fs, dw[0], dw[1], cfg.dt)?;
            let mid_ops = asm.effective(Frame::from_state(&mid), Drive::at(&boundary.model, &mid))?;
            stratonovich_unitary_step(state, &mid_ops, dw, cfg.dt)?;
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{simulate, BoundaryModel};
    use crate::frame::{BasisKind, OperatorSpec};
    use crate::linalg::{eigh, max_abs_diff, norm};
    use crate::sde::NoiseSource;

    fn assembler(kind: BasisKind, n: usize) -> Assembler {
        let basis = Basis::new(kind, n, 1.0).unwrap();
        Assembler::new(basis, OperatorSpec::harmonic(1.0, 3.0)).unwrap()
    }

    fn smooth_state(asm: &Assembler) -> StateVector {
        let mut s = StateVector::new(
            asm.basis()
                .project_function(|x| C64::new((-30.0 * x * x).exp() * (1.0 - 4.0 * x * x), 0.3 * x)),
        );
        s.normalize();
        s
    }

    fn frame() -> Frame {
        Frame {
            m: 0.1,
            len: 1.3,
            sign: -1.0,
        }
    }

    fn drive() -> Drive {
        Drive {
            mu1: 0.2,
            mu2: -0.3,
            sigma_a: 0.4,
            sigma_b: 0.25,
            sigma_slope: [0.0; 2],
        }
    }

    #[test]
    fn deterministic_limit_is_plain_schrodinger() {
        let asm = assembler(BasisKind::DirichletSine, 12);
        let ops = asm.effective(Frame::IDENTITY, Drive::default()).unwrap();
        let mut s = smooth_state(&asm);
        let kphi = ops.k.apply(&s.coeffs);
        let want: Vec<C64> = s.coeffs.iter().zip(&kphi).map(|(p, k)| p - I * k * 1e-3).collect();
        ito_sse_step(&mut s, &ops, [0.0, 0.0], 1e-3, ItoOrder::EulerMaruyama, DRIFT_FACTOR).unwrap();
        assert!(max_abs_diff(&s.coeffs, &want) < 1e-15);
        assert_eq!(s.t, 1e-3);
    }

    #[test]
    fn ito_step_preserves_norm_in_mean() {
        let asm = assembler(BasisKind::DirichletSine, 12);
        let ops = asm.effective(frame(), drive()).unwrap();
        let s0 = smooth_state(&asm);
        // The O(dt^2) bias must sit well below the O(dt) standard error.
        let dt = 1e-5;
        let noise = NoiseSource::new(11, 2, dt).unwrap();
        let n = 10_000;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = s0.clone();
                let dw = noise.increments(i);
                ito_sse_step(&mut s, &ops, [dw[0], dw[1]], dt, ItoOrder::EulerMaruyama, 1e6).unwrap();
                s.norm_sqr()
            })
            .collect();
        let (mean, se) = crate::boundary::mean_and_se(&vals);
        assert!(se > 0.0);
        assert!((mean - 1.0).abs() < 3.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn eigenstate_rotates_by_phase() {
        let asm = assembler(BasisKind::QuasiPeriodic { theta: 0.4 }, 16);
        let ops = asm.effective(Frame::IDENTITY, Drive::default()).unwrap();
        let eig = eigh(&ops.k).unwrap();
        let mut s = StateVector::new(eig.vectors.column(0));
        let e0 = eig.values[0];
        let dt = 1e-3;
        let want: Vec<C64> = s.coeffs.iter().map(|c| c * C64::from_polar(1.0, -e0 * dt)).collect();
        stratonovich_unitary_step(&mut s, &ops, [0.0, 0.0], dt).unwrap();
        assert!(max_abs_diff(&s.coeffs, &want) < 1e-12);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn stratonovich_step_is_unitary() {
        for kind in [BasisKind::DirichletSine, BasisKind::QuasiPeriodic { theta: 1.1 }] {
            let asm = assembler(kind, 16);
            let ops = asm.effective(frame(), drive()).unwrap();
            let mut s = smooth_state(&asm);
            let noise = NoiseSource::new(3, 2, 1e-3).unwrap();
            for i in 0..200 {
                let dw = noise.increments(i);
                stratonovich_unitary_step(&mut s, &ops, [dw[0], dw[1]], 1e-3).unwrap();
            }
            assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stratonovich_refuses_non_hermitian_generator() {
        let asm = assembler(BasisKind::DirichletSine, 8);
        let mut k = asm.k(Frame::IDENTITY).unwrap();
        k[(0, 1)] += C64::new(0.5, 0.0);
        let ops = asm.effective_with_k(Frame::IDENTITY, Drive::default(), k);
        let mut s = StateVector::basis_vector(8, 0);
        let err = stratonovich_unitary_step(&mut s, &ops, [0.0, 0.0], 1e-2).unwrap_err();
        assert!(matches!(err, Error::NonHermitian { .. }));
    }

    #[test]
    fn zero_noise_schemes_differ_at_second_order() {
        let asm = assembler(BasisKind::DirichletSine, 10);
        let ops = asm.effective(frame(), drive()).unwrap();
        let gap = |dt: f64| {
            let mut a = smooth_state(&asm);
            let mut b = a.clone();
            let mut quiet = ops.clone();
            quiet.coupling = [0.0, 0.0];
            ito_sse_step(&mut a, &quiet, [0.0, 0.0], dt, ItoOrder::EulerMaruyama, 1e6).unwrap();
            stratonovich_unitary_step(&mut b, &quiet, [0.0, 0.0], dt).unwrap();
            max_abs_diff(&a.coeffs, &b.coeffs)
        };
        let ratio = gap(1e-3) / gap(5e-4);
        assert!((ratio - 4.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn norm_drift_guard_trips() {
        let asm = assembler(BasisKind::DirichletSine, 8);
        let ops = asm.effective(frame(), drive()).unwrap();
        let mut s = smooth_state(&asm);
        let err = ito_sse_step(&mut s, &ops, [3.0, -3.0], 1e-2, ItoOrder::EulerMaruyama, 1.0).unwrap_err();
        assert!(matches!(err, Error::Instability { scheme: "ito", .. }));
        assert_eq!(s.t, 0.0);
    }

    #[test]
    fn maximally_mixed_state_is_stationary() {
        let asm = assembler(BasisKind::DirichletSine, 10);
        let d = Drive { mu1: 0.0, mu2: 0.0, ..drive() };
        let ops = asm.effective(frame(), d).unwrap();
        let mut quiet = ops;
        quiet.p_coeff = 0.0;
        quiet.g_coeff = 0.0;
        let mut rho = DensityMatrix::maximally_mixed(10);
        let start = rho.entries.clone();
        for order in [ItoOrder::EulerMaruyama, ItoOrder::Milstein] {
            density_step(&mut rho, &quiet, [0.03, -0.02], 1e-3, order, DRIFT_FACTOR).unwrap();
        }
        assert!(rho.entries.max_abs_diff(&start) < 1e-15);
    }

    #[test]
    fn noiseless_density_step_is_von_neumann() {
        let asm = assembler(BasisKind::QuasiPeriodic { theta: 0.2 }, 8);
        let ops = asm.effective(Frame::IDENTITY, Drive::default()).unwrap();
        let s = smooth_state(&asm);
        let mut rho = s.projector();
        let dt = 1e-3;
        let mut want = rho.entries.clone();
        want.add_scaled(-I * dt, &ops.k.commutator(&rho.entries));
        density_step(&mut rho, &ops, [0.0, 0.0], dt, ItoOrder::EulerMaruyama, DRIFT_FACTOR).unwrap();
        assert!(rho.entries.max_abs_diff(&want) < 1e-15);
        assert!((rho.trace() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn density_step_tracks_pure_state() {
        // Same normal draws scaled to each dt: the one-step gap of the
        // Milstein pair is O(dt^{3/2}).
        let asm = assembler(BasisKind::DirichletSine, 10);
        let ops = asm.effective(frame(), drive()).unwrap();
        let s0 = smooth_state(&asm);
        let z = [0.7, -1.3];
        let gap = |dt: f64| {
            let dw = [z[0] * dt.sqrt(), z[1] * dt.sqrt()];
            let mut s = s0.clone();
            let mut rho = s0.projector();
            ito_sse_step(&mut s, &ops, dw, dt, ItoOrder::Milstein, 1e6).unwrap();
            density_step(&mut rho, &ops, dw, dt, ItoOrder::Milstein, 1e6).unwrap();
            assert!(rho.entries.hermiticity_defect() < 1e-12);
            assert!((rho.trace() - 1.0).abs() < 1e-12);
            rho.entries.max_abs_diff(&s.projector().entries)
        };
        let slope = (gap(1e-4) / gap(2.5e-5)).log2() / 2.0;
        assert!(slope > 1.4, "{slope}");
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::maximally_mixed(6).validate(1e-14).is_ok());
        let mut rho = DensityMatrix::maximally_mixed(4);
        rho.entries[(0, 1)] = C64::new(0.0, 0.1);
        assert!(matches!(rho.validate(1e-12), Err(Error::NonHermitian { .. })));
        let mut rho = DensityMatrix::maximally_mixed(2);
        rho.entries[(0, 0)] = re(1.2);
        rho.entries[(1, 1)] = re(-0.2);
        assert!(matches!(rho.validate(1e-12), Err(Error::Positivity { .. })));
        rho.entries[(1, 1)] = re(0.3);
        assert!(matches!(rho.validate(1e-12), Err(Error::Instability { .. })));
    }

    #[test]
    fn density_trace_is_conserved() {
        let asm = assembler(BasisKind::DirichletSine, 10);
        let ops = asm.effective(frame(), drive()).unwrap();
        let mut rho = smooth_state(&asm).projector();
        let noise = NoiseSource::new(5, 2, 1e-4).unwrap();
        for i in 0..50 {
            let dw = noise.increments(i);
            density_step(&mut rho, &ops, [dw[0], dw[1]], 1e-4, ItoOrder::EulerMaruyama, DRIFT_FACTOR).unwrap();
        }
        assert!((rho.trace() - 1.0).abs() < 1e-12);
        assert!(rho.entries.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn map_back_examples() {
        let asm = assembler(BasisKind::DirichletSine, 8);
        let b = asm.basis();
        let s = smooth_state(&asm);
        let grid: Vec<f64> = (0..=20).map(|i| -0.5 + i as f64 / 20.0).collect();
        let psi = map_back(b, &s.coeffs, Frame::IDENTITY, &grid).unwrap();
        for (y, v) in grid.iter().zip(&psi) {
            assert!((v - b.eval(&s.coeffs, 0, *y)).norm() < 1e-15);
        }
        // Lowest mode on [-1, 1].
        let e0 = StateVector::basis_vector(8, 0);
        let wide = Frame { m: 0.0, len: 2.0, sign: -1.0 };
        let q = crate::quadrature::GaussLegendre::new(40, -1.0, 1.0);
        let psi = map_back(b, &e0.coeffs, wide, &q.nodes).unwrap();
        let mut mass = 0.0;
        for ((y, v), w) in q.nodes.iter().zip(&psi).zip(&q.weights) {
            let want = (0.5f64).sqrt() * 2f64.sqrt() * (core::f64::consts::PI * (y / 2.0 + 0.5)).sin();
            assert!((v.re - want).abs() < 1e-14 && v.im.abs() < 1e-15);
            mass += v.norm_sqr() * w;
        }
        assert!((mass - 1.0).abs() < 1e-13);
        // Dirichlet endpoints of a shifted frame.
        let f = Frame { m: 0.7, len: 0.4, sign: 1.0 };
        let ends = map_back(b, &s.coeffs, f, &[0.5, 0.9]).unwrap();
        assert!(norm(&ends) < 1e-13);
        let err = map_back(b, &s.coeffs, f, &[0.95]).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn config_requires_commensurate_horizon() {
        assert_eq!(EvolutionConfig::new(1e-3, 0.1, EvolutionScheme::Ito).unwrap().steps().unwrap(), 100);
        assert!(EvolutionConfig::new(1e-3, 0.10005, EvolutionScheme::Ito).is_err());
        assert!(EvolutionConfig::new(0.0, 1.0, EvolutionScheme::Ito).is_err());
    }

    #[test]
    fn evolve_shares_noise_with_boundary() {
        let asm = assembler(BasisKind::DirichletSine, 8);
        let model = BoundaryModel::Dyson {
            beta: 1.0,
            sigma_a: 0.3,
            sigma_b: 0.3,
        };
        let stepper = BoundaryStepper::new(model).unwrap();
        let init = FrameState::new(-1.0, 1.0, 1.0).unwrap();
        let dt = 1e-3;
        let noise = NoiseSource::new(42, 2, dt).unwrap();
        let cfg = EvolutionConfig::new(dt, 0.05, EvolutionScheme::StratonovichUnitary).unwrap();
        let rec = Recording {
            every: 10,
            snapshot_every: 25,
        };
        let traj = evolve(&asm, &stepper, init, smooth_state(&asm), &noise, &cfg, rec).unwrap();
        assert!(traj.abort.is_none());
        assert_eq!(traj.records.len(), 6);
        assert_eq!(traj.snapshots.len(), 3);
        let run = simulate(&stepper, init, &noise, 50, 1);
        let last = run.final_state().unwrap();
        assert_eq!((traj.frame.a, traj.frame.b), (last.a, last.b));
        for r in &traj.records {
            assert!((r.norm - 1.0).abs() < 1e-12);
        }
    }

    /// Mean strong error at `T` of a frozen-coefficient, single-channel
    /// problem against a fine Stratonovich solution on the same path.
    fn strong_errors(ito: bool) -> Vec<(f64, f64)> {
        let asm = assembler(BasisKind::DirichletSine, 8);
        let d = Drive {
            sigma_b: 0.0,
            sigma_a: 1.5,
            ..drive()
        };
        let ops = asm.effective(frame(), d).unwrap();
        // The Stratonovich step adds the shift itself; the Itô form needs it explicitly.
        let mut ito_ops = ops.clone();
        let (dp, dg) = ops.stratonovich_shift();
        ito_ops.p_coeff += dp;
        ito_ops.g_coeff += dg;
        let horizon = 0.04;
        let fine_dt = horizon / 65536.0;
        let mut out = Vec::new();
        for factor in [16u64, 64, 256, 1024] {
            let mut err = 0.0;
            let paths = 12;
            for seed in 0..paths {
                let fine = NoiseSource::new(seed, 2, fine_dt).unwrap();
                let run = |src: &NoiseSource, stratonovich: bool| {
                    let mut s = StateVector::basis_vector(8, 0);
                    s.coeffs[1] = C64::new(0.0, 1.0);
                    s.normalize();
                    let mut streams = src.streams();
                    let steps = (horizon / src.dt()).round() as u64;
                    let mut dw = [0.0; 2];
                    for _ in 0..steps {
                        streams.next_into(&mut dw);
                        if stratonovich {
                            stratonovich_unitary_step(&mut s, &ops, dw, src.dt()).unwrap();
                        } else {
                            ito_sse_step(&mut s, &ito_ops, dw, src.dt(), ItoOrder::EulerMaruyama, 1e9).unwrap();
                        }
                    }
                    s.coeffs
                };
                let exact = run(&fine, true);
                let coarse = run(&fine.coarsened(factor).unwrap(), !ito);
                let diff: Vec<C64> = exact.iter().zip(&coarse).map(|(a, b)| a - b).collect();
                err += norm(&diff);
            }
            out.push((fine_dt * factor as f64, err / paths as f64));
        }
        out
    }

    fn loglog_slope(points: &[(f64, f64)]) -> f64 {
        let n = points.len() as f64;
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    }

    #[test]
    fn strong_order_of_both_schemes() {
        let em = loglog_slope(&strong_errors(true));
        let st = loglog_slope(&strong_errors(false));
        std::println!("em {em} stratonovich {st}");
        assert!((em - 0.5).abs() < 0.15, "euler-maruyama slope {em}");
        assert!((st - 1.0).abs() < 0.15, "stratonovich slope {st}");
    }
}
