//! Diffusing interval endpoints and the frame processes derived from them.
//!
//! The endpoints `a_t`, `b_t` follow
//! `da = mu_a dt + sigma_a dW_a`, `db = mu_b dt + sigma_b dW_b`.
//! The frame coordinates are the midpoint `m = (a+b)/2`, the length
//! `l = |a-b| / L0` and `sign(a-b)`; their Itô drifts are
//!
//! * `mu1 = (mu_a + mu_b)/2` (drift of `m`),
//! * `mu2 = sign(a-b)(mu_a - mu_b)/l - (sigma_a^2 + sigma_b^2)/(2 l^2)`
//!   (drift of `log l`).
//!
//! The local-time contribution at `a = b` is never simulated: a step that
//! brings the endpoints closer than `eps_min`, or swaps their order, aborts
//! the trajectory.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::sde::{NoiseSource, StepScheme};

/// `c + x * position + t * time`, used for the generic model's drift and
/// diffusion coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Affine {
    pub c: f64,
    pub x: f64,
    pub t: f64,
}

impl Affine {
    pub const fn constant(c: f64) -> Self {
        Self { c, x: 0.0, t: 0.0 }
    }

    #[inline]
    pub fn eval(&self, position: f64, time: f64) -> f64 {
        self.c + self.x * position + self.t * time
    }
}

/// How the Langevin endpoints are advanced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LangevinForm {
    /// Exact Ornstein–Uhlenbeck velocity update, trapezoidal position update.
    Exact,
    /// Closed form `v(t) = (v(0) + D W_t) exp(-gamma t / mass)`, which drops
    /// the convolution of the noise with the relaxation kernel.
    Reduced,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryModel {
    Generic {
        mu_a: Affine,
        sigma_a: Affine,
        mu_b: Affine,
        sigma_b: Affine,
    },
    Dyson {
        beta: f64,
        sigma_a: f64,
        sigma_b: f64,
    },
    Langevin {
        mass: f64,
        gamma: f64,
        temperature: f64,
        k_b: f64,
        form: LangevinForm,
        /// Extra repulsion `beta/(a-b)` on `a` (and its mirror on `b`).
        repulsion: f64,
    },
    Overdamped {
        d: f64,
        gamma: f64,
        repulsion: f64,
    },
}

impl BoundaryModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            BoundaryModel::Generic { .. } => true,
            BoundaryModel::Dyson {
                beta,
                sigma_a,
                sigma_b,
            } => beta.is_finite() && sigma_a.is_finite() && sigma_b.is_finite(),
            BoundaryModel::Langevin {
                mass,
                gamma,
                temperature,
                k_b,
                ..
            } => mass > 0.0 && gamma > 0.0 && temperature >= 0.0 && k_b > 0.0,
            BoundaryModel::Overdamped { d, gamma, .. } => d > 0.0 && gamma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("boundary model parameters out of range"))
        }
    }

    /// Noise strength `D = sqrt(2 k_b T gamma)` of the Langevin model.
    pub fn langevin_noise(&self) -> Option<f64> {
        match *self {
            BoundaryModel::Langevin {
                gamma,
                temperature,
                k_b,
                ..
            } => Some((2.0 * k_b * temperature * gamma).sqrt()),
            _ => None,
        }
    }

    fn repulsion(&self) -> f64 {
        match *self {
            BoundaryModel::Langevin { repulsion, .. } | BoundaryModel::Overdamped { repulsion, .. } => {
                repulsion
            }
            _ => 0.0,
        }
    }

    /// Endpoint drifts and diffusions `(mu_a, sigma_a, mu_b, sigma_b)` at
    /// the given state. For Langevin the endpoints are differentiable, so
    /// their diffusions vanish and the drifts are the velocities.
    pub fn coefficients(&self, s: &FrameState) -> (f64, f64, f64, f64) {
        let rep = self.repulsion() / (s.a - s.b);
        match *self {
            BoundaryModel::Generic {
                mu_a,
                sigma_a,
                mu_b,
                sigma_b,
            } => (
                mu_a.eval(s.a, s.t),
                sigma_a.eval(s.a, s.t),
                mu_b.eval(s.b, s.t),
                sigma_b.eval(s.b, s.t),
            ),
            BoundaryModel::Dyson {
                beta,
                sigma_a,
                sigma_b,
            } => (beta / (s.a - s.b), sigma_a, beta / (s.b - s.a), sigma_b),
            BoundaryModel::Langevin { .. } => (s.v_a + rep, 0.0, s.v_b - rep, 0.0),
            BoundaryModel::Overdamped { d, gamma, .. } => (rep, d / gamma, -rep, d / gamma),
        }
    }

    /// Drift of the midpoint.
    pub fn mu1(&self, s: &FrameState) -> f64 {
        let (ma, _, mb, _) = self.coefficients(s);
        0.5 * (ma + mb)
    }

    /// Drift of `log l`. Uses the physical length `|a-b|`, which equals
    /// `l` when `L0 = 1`; the drift of `log l` does not depend on `L0`.
    pub fn mu2(&self, s: &FrameState) -> f64 {
        let (ma, sa, mb, sb) = self.coefficients(s);
        let len = (s.a - s.b).abs();
        s.sign * (ma - mb) / len - (sa * sa + sb * sb) / (2.0 * len * len)
    }

    /// `d sigma_a / d a` and `d sigma_b / d b`.
    pub fn sigma_slopes(&self) -> [f64; 2] {
        match *self {
            BoundaryModel::Generic {
                sigma_a, sigma_b, ..
            } => [sigma_a.x, sigma_b.x],
            _ => [0.0; 2],
        }
    }

    /// Diffusion coefficients `(sigma_a, sigma_b)` entering the frame noise.
    pub fn sigmas(&self, s: &FrameState) -> (f64, f64) {
        let (_, sa, _, sb) = self.coefficients(s);
        (sa, sb)
    }
}

/// `mu2` for the Dyson model in closed form.
pub fn dyson_mu2(beta: f64, sigma_a: f64, sigma_b: f64, l: f64) -> f64 {
    (4.0 * beta - sigma_a * sigma_a - sigma_b * sigma_b) / (2.0 * l * l)
}

/// `mu2` for the overdamped model in closed form.
pub fn overdamped_mu2(d: f64, gamma: f64, l: f64) -> f64 {
    -(d * d) / (l * l * gamma * gamma)
}

/// `(m, l, sign(a-b))`.
pub fn frame_coordinates(a: f64, b: f64, l0: f64) -> Result<(f64, f64, f64)> {
    if a == b {
        return Err(Error::Collision { t: 0.0, a, b });
    }
    let sign = if a > b { 1.0 } else { -1.0 };
    Ok((0.5 * (a + b), (a - b).abs() / l0, sign))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameState {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub m: f64,
    pub l: f64,
    pub sign: f64,
    pub v_a: f64,
    pub v_b: f64,
    /// Accumulated Wiener paths (needed by the reduced Langevin form).
    pub w_a: f64,
    pub w_b: f64,
}

impl FrameState {
    pub fn new(a: f64, b: f64, l0: f64) -> Result<Self> {
        let (m, l, sign) = frame_coordinates(a, b, l0)?;
        Ok(Self {
            t: 0.0,
            a,
            b,
            m,
            l,
            sign,
            v_a: 0.0,
            v_b: 0.0,
            w_a: 0.0,
            w_b: 0.0,
        })
    }

    pub fn with_velocities(mut self, v_a: f64, v_b: f64) -> Self {
        self.v_a = v_a;
        self.v_b = v_b;
        self
    }

    /// Physical interval length `|a - b|`.
    pub fn length(&self) -> f64 {
        (self.a - self.b).abs()
    }

    fn refresh(&mut self, l0: f64) {
        self.m = 0.5 * (self.a + self.b);
        self.l = (self.a - self.b).abs() / l0;
        if self.a != self.b {
            self.sign = if self.a > self.b { 1.0 } else { -1.0 };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameIncrement {
    pub dm: f64,
    pub dl: f64,
    pub dlogl: f64,
    pub dw_a: f64,
    pub dw_b: f64,
    pub mu1: f64,
    pub mu2: f64,
}

/// Integrator for one boundary model.
#[derive(Clone, Debug)]
pub struct BoundaryStepper {
    pub model: BoundaryModel,
    pub scheme: StepScheme,
    pub l0: f64,
    /// Collision guard on `l`.
    pub eps_min: f64,
}

impl BoundaryStepper {
    pub fn new(model: BoundaryModel) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            model,
            scheme: StepScheme::EulerMaruyama,
            l0: 1.0,
            eps_min: 1e-6,
        })
    }

    pub fn with_scheme(mut self, scheme: StepScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_guard(mut self, eps_min: f64) -> Self {
        self.eps_min = eps_min;
        self
    }

    pub fn with_l0(mut self, l0: f64) -> Self {
        self.l0 = l0;
        self
    }

    fn guard(&self, s: &FrameState) -> Result<()> {
        if !(s.l > self.eps_min) || !s.a.is_finite() || !s.b.is_finite() {
            return Err(Error::Collision {
                t: s.t,
                a: s.a,
                b: s.b,
            });
        }
        Ok(())
    }

    /// Advance one step with the given increments.
    pub fn step(&self, s: &FrameState, dw_a: f64, dw_b: f64, dt: f64) -> Result<(FrameState, FrameIncrement)> {
        self.guard(s)?;
        let mu1 = self.model.mu1(s);
        let mu2 = self.model.mu2(s);
        let mut n = *s;
        n.t = s.t + dt;
        n.w_a += dw_a;
        n.w_b += dw_b;
        match self.model {
            BoundaryModel::Langevin {
                mass, gamma, form, ..
            } => {
                let d = self.model.langevin_noise().unwrap_or(0.0);
                let rep = self.model.repulsion() / (s.a - s.b);
                let decay = (-gamma * dt / mass).exp();
                match form {
                    LangevinForm::Exact => {
                        // Velocity noise D/mass, variance of the OU update
                        // (D/mass)^2 (1 - e^{-2 gamma dt/mass}) mass/(2 gamma).
                        let scale = if dt > 0.0 {
                            (d / mass) * ((1.0 - decay * decay) * mass / (2.0 * gamma) / dt).sqrt()
                        } else {
                            0.0
                        };
                        n.v_a = s.v_a * decay + scale * dw_a;
                        n.v_b = s.v_b * decay + scale * dw_b;
                    }
                    LangevinForm::Reduced => {
                        // v(t) = (v(0) + D W_t) e^{-gamma t/mass}, updated
                        // multiplicatively so the initial velocity is implicit.
                        let envelope = (-gamma * n.t / mass).exp();
                        n.v_a = s.v_a * decay + d * dw_a * envelope;
                        n.v_b = s.v_b * decay + d * dw_b * envelope;
                    }
                }
                n.a = s.a + 0.5 * (s.v_a + n.v_a) * dt + rep * dt;
                n.b = s.b + 0.5 * (s.v_b + n.v_b) * dt - rep * dt;
            }
            _ => {
                let (ma, sa, mb, sb) = self.model.coefficients(s);
                n.a = s.a + ma * dt + sa * dw_a;
                n.b = s.b + mb * dt + sb * dw_b;
                if self.scheme == StepScheme::Milstein {
                    if let BoundaryModel::Generic {
                        sigma_a, sigma_b, ..
                    } = self.model
                    {
                        n.a += 0.5 * sa * sigma_a.x * (dw_a * dw_a - dt);
                        n.b += 0.5 * sb * sigma_b.x * (dw_b * dw_b - dt);
                    }
                }
            }
        }
        n.refresh(self.l0);
        self.guard(&n)?;
        if n.sign != s.sign {
            return Err(Error::Collision {
                t: n.t,
                a: n.a,
                b: n.b,
            });
        }
        let inc = FrameIncrement {
            dm: n.m - s.m,
            dl: n.l - s.l,
            dlogl: (n.l / s.l).ln(),
            dw_a,
            dw_b,
            mu1,
            mu2,
        };
        Ok((n, inc))
    }

    /// Midpoint state used to evaluate Stratonovich coefficients: the
    /// average of the current state and the state after a full step.
    pub fn half_step(&self, s: &FrameState, dw_a: f64, dw_b: f64, dt: f64) -> Result<FrameState> {
        let (next, _) = self.step(s, dw_a, dw_b, dt)?;
        let mut mid = *s;
        mid.t = s.t + 0.5 * dt;
        mid.a = 0.5 * (s.a + next.a);
        mid.b = 0.5 * (s.b + next.b);
        mid.v_a = 0.5 * (s.v_a + next.v_a);
        mid.v_b = 0.5 * (s.v_b + next.v_b);
        mid.w_a = s.w_a + 0.5 * dw_a;
        mid.w_b = s.w_b + 0.5 * dw_b;
        mid.refresh(self.l0);
        self.guard(&mid)?;
        Ok(mid)
    }
}

/// One row of a boundary trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryRecord {
    pub step: u64,
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub m: f64,
    pub l: f64,
    pub sign: f64,
    pub dw_a: f64,
    pub dw_b: f64,
}

impl BoundaryRecord {
    fn from_state(step: u64, s: &FrameState, dw_a: f64, dw_b: f64) -> Self {
        Self {
            step,
            t: s.t,
            a: s.a,
            b: s.b,
            m: s.m,
            l: s.l,
            sign: s.sign,
            dw_a,
            dw_b,
        }
    }
}

/// Result of a boundary simulation; on abort the rows up to the failure are
/// kept alongside the error.
#[derive(Clone, Debug)]
pub struct BoundaryRun {
    pub records: Vec<BoundaryRecord>,
    pub abort: Option<Error>,
}

impl BoundaryRun {
    pub fn final_state(&self) -> Option<&BoundaryRecord> {
        self.records.last()
    }

    pub fn min_length(&self) -> f64 {
        self.records.iter().map(|r| r.l).fold(f64::INFINITY, f64::min)
    }

    pub fn sign_flips(&self) -> usize {
        self.records.windows(2).filter(|w| w[0].sign != w[1].sign).count()
    }
}

/// Simulate `steps` steps from `init`, drawing channel 0 for `a` and
/// channel 1 for `b`. Row 0 is the initial state (zero increments); row
/// `k` holds the state after step `k` and the increments that produced it.
pub fn simulate(
    stepper: &BoundaryStepper,
    init: FrameState,
    noise: &NoiseSource,
    steps: u64,
    record_every: u64,
) -> BoundaryRun {
    let dt = noise.dt();
    let mut streams = noise.streams();
    let every = record_every.max(1);
    let mut records = Vec::with_capacity((steps / every + 2) as usize);
    records.push(BoundaryRecord::from_state(0, &init, 0.0, 0.0));
    let mut s = init;
    let mut dw = [0.0; 2];
    for k in 1..=steps {
        streams.next_into(&mut dw);
        match stepper.step(&s, dw[0], dw[1], dt) {
            Ok((n, _)) => s = n,
            Err(e) => {
                return BoundaryRun {
                    records,
                    abort: Some(e),
                }
            }
        }
        if k % every == 0 || k == steps {
            records.push(BoundaryRecord::from_state(k, &s, dw[0], dw[1]));
        }
    }
    BoundaryRun {
        records,
        abort: None,
    }
}

/// Monte-Carlo estimate of the drift of `log l` at a fixed state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub collisions: usize,
}

/// Estimate `E[d log l]/dt` from `ensemble` short trajectories of
/// `steps` steps each, all started at `init`.
///
/// The known martingale part `sum_k dX2_k / l_k` (with
/// `dX2 = sign (sigma_a dW_a - sigma_b dW_b)`) is subtracted path by path
/// as a control variate; it has zero mean, so the estimator stays unbiased
/// while the Itô correction, which comes from the realised quadratic
/// variation, is kept.
pub fn estimate_log_length_drift(
    stepper: &BoundaryStepper,
    init: FrameState,
    seed: u64,
    ensemble: usize,
    dt: f64,
    steps: u64,
) -> Result<DriftEstimate> {
    if ensemble < 2 || steps == 0 {
        return Err(Error::InvalidParameter("need at least two trajectories and one step"));
    }
    let horizon = steps as f64 * dt;
    let mut samples = Vec::with_capacity(ensemble);
    let mut collisions = 0;
    for j in 0..ensemble {
        let noise = NoiseSource::new(seed.wrapping_add(j as u64), 2, dt)?;
        let mut streams = noise.streams();
        let mut s = init;
        let mut mart = 0.0;
        let mut ok = true;
        let mut dw = [0.0; 2];
        for _ in 0..steps {
            streams.next_into(&mut dw);
            let (sa, sb) = stepper.model.sigmas(&s);
            mart += s.sign * (sa * dw[0] - sb * dw[1]) / s.length();
            match stepper.step(&s, dw[0], dw[1], dt) {
                Ok((n, _)) => s = n,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            collisions += 1;
            continue;
        }
        samples.push(((s.l / init.l).ln() - mart) / horizon);
    }
    if collisions as f64 > 1e-3 * ensemble as f64 {
        return Err(Error::Unsupported(
            "collision rate above 0.1%: model unsuitable for this horizon",
        ));
    }
    let (mean, std_error) = mean_and_se(&samples);
    Ok(DriftEstimate {
        mean,
        std_error,
        n: samples.len(),
        collisions,
    })
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dyson(beta: f64, s: f64) -> BoundaryModel {
        BoundaryModel::Dyson {
            beta,
            sigma_a: s,
            sigma_b: s,
        }
    }

    fn overdamped(d: f64, gamma: f64) -> BoundaryModel {
        BoundaryModel::Overdamped {
            d,
            gamma,
            repulsion: 0.0,
        }
    }

    #[test]
    fn frame_coordinates_examples() {
        assert_eq!(frame_coordinates(-1.0, 1.0, 1.0).unwrap(), (0.0, 2.0, -1.0));
        let (m, l, s) = frame_coordinates(0.5, 0.1, 1.0).unwrap();
        assert!((m - 0.3).abs() < 1e-15 && (l - 0.4).abs() < 1e-15 && s == 1.0);
        assert!(matches!(frame_coordinates(0.0, 0.0, 1.0), Err(Error::Collision { .. })));
    }

    #[test]
    fn zero_generic_model_is_static() {
        let model = BoundaryModel::Generic {
            mu_a: Affine::default(),
            sigma_a: Affine::default(),
            mu_b: Affine::default(),
            sigma_b: Affine::default(),
        };
        let st = BoundaryStepper::new(model).unwrap();
        let s = FrameState::new(-0.3, 0.9, 1.0).unwrap();
        let (n, inc) = st.step(&s, 0.4, -0.2, 0.01).unwrap();
        assert_eq!((n.a, n.b, n.m, n.l), (s.a, s.b, s.m, s.l));
        assert_eq!(inc.mu1, 0.0);
        assert_eq!(inc.mu2, 0.0);
    }

    #[test]
    fn dyson_deterministic_step() {
        let st = BoundaryStepper::new(dyson(1.0, 1.0)).unwrap();
        let s = FrameState::new(-1.0, 1.0, 1.0).unwrap();
        let (n, _) = st.step(&s, 0.0, 0.0, 1e-3).unwrap();
        assert!((n.a - s.a + 5e-4).abs() < 1e-15);
        assert!((n.b - s.b - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn overdamped_unit_step_is_the_noise() {
        let st = BoundaryStepper::new(overdamped(1.0, 1.0)).unwrap();
        let s = FrameState::new(-0.5, 0.5, 1.0).unwrap();
        let (n, _) = st.step(&s, 0.0123, -0.02, 1e-4).unwrap();
        assert!((n.a - s.a - 0.0123).abs() < 1e-15);
        assert!((n.b - s.b + 0.02).abs() < 1e-15);
    }

    #[test]
    fn drift_formulas() {
        let generic = BoundaryModel::Generic {
            mu_a: Affine::constant(1.0),
            sigma_a: Affine::default(),
            mu_b: Affine::constant(3.0),
            sigma_b: Affine::default(),
        };
        let s = FrameState::new(0.0, 1.0, 1.0).unwrap();
        assert_eq!(generic.mu1(&s), 2.0);

        let s2 = FrameState::new(-1.0, 1.0, 1.0).unwrap();
        assert_eq!(dyson(1.0, 1.0).mu1(&s2), 0.0);
        assert!((dyson(1.0, 1.0).mu2(&s2) - 0.25).abs() < 1e-15);
        assert!((dyson_mu2(1.0, 1.0, 1.0, 2.0) - 0.25).abs() < 1e-15);

        let s1 = FrameState::new(-0.5, 0.5, 1.0).unwrap();
        assert!((overdamped(1.0, 1.0).mu2(&s1) + 1.0).abs() < 1e-15);
        assert_eq!(overdamped(1.0, 1.0).mu1(&s1), 0.0);
    }

    #[test]
    fn langevin_at_rest_has_no_drift() {
        for form in [LangevinForm::Exact, LangevinForm::Reduced] {
            let model = BoundaryModel::Langevin {
                mass: 1.0,
                gamma: 1.0,
                temperature: 1.0,
                k_b: 1.0,
                form,
                repulsion: 0.0,
            };
            let s = FrameState::new(-0.5, 0.5, 1.0).unwrap();
            assert_eq!(model.mu1(&s), 0.0);
            assert_eq!(model.mu2(&s), 0.0);
            assert_eq!(model.langevin_noise(), Some(2f64.sqrt()));
        }
    }

    #[test]
    fn langevin_velocity_relaxes_without_noise() {
        let (mass, gamma) = (2.0, 3.0);
        for form in [LangevinForm::Exact, LangevinForm::Reduced] {
            let model = BoundaryModel::Langevin {
                mass,
                gamma,
                temperature: 0.0,
                k_b: 1.0,
                form,
                repulsion: 0.0,
            };
            let st = BoundaryStepper::new(model).unwrap();
            let mut s = FrameState::new(-1.0, 1.0, 1.0)
                .unwrap()
                .with_velocities(0.7, -0.2);
            let dt = 1e-3;
            for _ in 0..500 {
                s = st.step(&s, 0.3, -0.1, dt).unwrap().0;
            }
            let decay = (-gamma * s.t / mass).exp();
            assert!((s.v_a - 0.7 * decay).abs() < 1e-12);
            assert!((s.v_b + 0.2 * decay).abs() < 1e-12);
            // Position integrates the velocity: a(t) = a0 + v0 m/gamma (1 - decay).
            let expect = -1.0 + 0.7 * mass / gamma * (1.0 - decay);
            assert!((s.a - expect).abs() < 1e-6, "{} vs {}", s.a, expect);
        }
    }

    #[test]
    fn identities_hold_exactly_after_each_step() {
        let st = BoundaryStepper::new(dyson(0.7, 0.9)).unwrap();
        let noise = NoiseSource::new(3, 2, 1e-3).unwrap();
        let run = simulate(&st, FrameState::new(0.2, 1.7, 1.0).unwrap(), &noise, 2000, 1);
        assert!(run.abort.is_none());
        for r in &run.records {
            assert_eq!(r.m, 0.5 * (r.a + r.b));
            assert_eq!(r.l, (r.a - r.b).abs());
        }
    }

    #[test]
    fn collision_aborts_with_diagnostic() {
        let st = BoundaryStepper::new(overdamped(1.0, 1.0)).unwrap();
        let s = FrameState::new(0.0, 0.01, 1.0).unwrap();
        // Jumping past the other endpoint crosses l = 0 within the step.
        assert!(matches!(st.step(&s, 0.02, 0.0, 1e-4), Err(Error::Collision { .. })));
        let err = st.step(&s, 0.01, 0.0, 1e-4).unwrap_err();
        assert!(matches!(err, Error::Collision { a, b, .. } if a == b));
    }

    #[test]
    fn milstein_only_differs_for_state_dependent_noise() {
        let model = BoundaryModel::Generic {
            mu_a: Affine::default(),
            sigma_a: Affine { c: 0.1, x: 0.5, t: 0.0 },
            mu_b: Affine::default(),
            sigma_b: Affine::constant(0.3),
        };
        let em = BoundaryStepper::new(model.clone()).unwrap();
        let mil = BoundaryStepper::new(model).unwrap().with_scheme(StepScheme::Milstein);
        let s = FrameState::new(1.0, 3.0, 1.0).unwrap();
        let (a, _) = em.step(&s, 0.2, 0.2, 0.01).unwrap();
        let (b, _) = mil.step(&s, 0.2, 0.2, 0.01).unwrap();
        let sa = 0.1 + 0.5 * 1.0;
        assert!((b.a - a.a - 0.5 * sa * 0.5 * (0.04 - 0.01)).abs() < 1e-15);
        assert_eq!(a.b, b.b);
    }

    #[test]
    fn deterministic_drift_estimate_is_exact_to_step_order() {
        let model = BoundaryModel::Generic {
            mu_a: Affine::constant(-0.2),
            sigma_a: Affine::default(),
            mu_b: Affine::constant(0.2),
            sigma_b: Affine::default(),
        };
        let st = BoundaryStepper::new(model).unwrap();
        let init = FrameState::new(-0.5, 0.5, 1.0).unwrap();
        let est = estimate_log_length_drift(&st, init, 0, 4, 1e-4, 10).unwrap();
        // d log l / dt = 0.4 / l = 0.4 at l = 1.
        assert!((est.mean - 0.4).abs() < 1e-3);
        assert!(est.std_error < 1e-12);
    }
}
