//! Wiener increments, scalar SDE stepping, quadratic covariation and the
//! stochastic logarithm.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Counter-based Gaussian noise: the increment for `(channel, step)` is a
/// pure function of the seed, so any trajectory can be replayed or split
/// across workers without coordination.
///
/// Each channel is a separate ChaCha stream. Step `k` consumes the four
/// 32-bit words starting at word `4k`, turned into one standard normal by
/// Box–Muller and scaled by `sqrt(dt)`.
///
/// A coarsened source sums consecutive increments of a finer one, so runs
/// at different step sizes can share one Brownian path.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSource {
    seed: u64,
    channels: usize,
    dt: f64,
    substeps: u64,
}

impl NoiseSource {
    pub fn new(seed: u64, channels: usize, dt: f64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidParameter("channel count must be positive"));
        }
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter("dt must be finite and non-negative"));
        }
        Ok(Self {
            seed,
            channels,
            dt,
            substeps: 1,
        })
    }

    /// The same path sampled `factor` times more coarsely: increment `k`
    /// is the sum of this source's increments `k*factor .. (k+1)*factor`.
    pub fn coarsened(&self, factor: u64) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidParameter("coarsening factor must be positive"));
        }
        Ok(Self {
            dt: self.dt * factor as f64,
            substeps: self.substeps * factor,
            ..self.clone()
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Increment of one channel at one step.
    pub fn increment(&self, channel: usize, step: u64) -> f64 {
        let mut s = self.stream(channel);
        s.seek(step);
        s.next_increment()
    }

    /// All channels at one step.
    pub fn increments(&self, step: u64) -> Vec<f64> {
        (0..self.channels)
            .map(|c| self.increment(c, step))
            .collect()
    }

    /// Sequential reader over one channel, starting at step 0. Yields the
    /// same values as [`NoiseSource::increment`], without re-keying the
    /// cipher at every step.
    pub fn stream(&self, channel: usize) -> ChannelStream {
        assert!(channel < self.channels, "channel out of range");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(channel as u64);
        ChannelStream {
            rng,
            sqrt_dt: (self.dt / self.substeps as f64).sqrt(),
            zero: self.dt == 0.0,
            substeps: self.substeps,
        }
    }

    /// One sequential stream per channel.
    pub fn streams(&self) -> MultiStream {
        MultiStream {
            streams: (0..self.channels).map(|c| self.stream(c)).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChannelStream {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
    zero: bool,
    substeps: u64,
}

impl ChannelStream {
    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(4 * step as u128 * self.substeps as u128);
    }

    pub fn next_normal(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    pub fn next_increment(&mut self) -> f64 {
        let mut acc = 0.0;
        for _ in 0..self.substeps {
            acc += self.next_normal() * self.sqrt_dt;
        }
        if self.zero {
            0.0
        } else {
            acc
        }
    }
}

#[derive(Clone, Debug)]
pub struct MultiStream {
    streams: Vec<ChannelStream>,
}

impl MultiStream {
    pub fn next_into(&mut self, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(&mut self.streams) {
            *o = s.next_increment();
        }
    }

    pub fn next_vec(&mut self) -> Vec<f64> {
        self.streams.iter_mut().map(|s| s.next_increment()).collect()
    }

    pub fn seek(&mut self, step: u64) {
        for s in &mut self.streams {
            s.seek(step);
        }
    }
}

/// Scalar process sampled on an increasing time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoPath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ItoPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Dimension {
                expected: times.len(),
                got: values.len(),
            });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("times must be strictly increasing"));
        }
        Ok(Self { times, values })
    }

    /// Uniform grid `t_k = k dt`.
    pub fn uniform(dt: f64, values: Vec<f64>) -> Result<Self> {
        let times = (0..values.len()).map(|k| k as f64 * dt).collect();
        Self::new(times, values)
    }

    /// Cumulative sum of increments starting from `x0`.
    pub fn from_increments(dt: f64, x0: f64, increments: &[f64]) -> Result<Self> {
        let mut values = Vec::with_capacity(increments.len() + 1);
        let mut x = x0;
        values.push(x);
        for d in increments {
            x += d;
            values.push(x);
        }
        Self::uniform(dt, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("empty path")
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            times: self.times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    fn same_grid(&self, other: &ItoPath) -> Result<()> {
        if self.times != other.times {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn zip_with(&self, other: &ItoPath, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_grid(other)?;
        Ok(Self {
            times: self.times.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Realised quadratic covariation `sum (da_i)(db_i)` at the final time.
pub fn covariation(a: &ItoPath, b: &ItoPath) -> Result<f64> {
    a.same_grid(b)?;
    Ok(a.values
        .windows(2)
        .zip(b.values.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[1] - y[0]))
        .sum())
}

/// Running realised covariation as a path.
pub fn covariation_path(a: &ItoPath, b: &ItoPath) -> Result<ItoPath> {
    a.same_grid(b)?;
    let mut values = Vec::with_capacity(a.len());
    let mut acc = 0.0;
    if !a.is_empty() {
        values.push(0.0);
    }
    for (x, y) in a.values.windows(2).zip(b.values.windows(2)) {
        acc += (x[1] - x[0]) * (y[1] - y[0]);
        values.push(acc);
    }
    Ok(ItoPath {
        times: a.times.clone(),
        values,
    })
}

/// Symmetric accumulator of pairwise covariations between `n` processes
/// observed step by step.
#[derive(Clone, Debug)]
pub struct Covariation {
    n: usize,
    acc: Vec<f64>,
}

impl Covariation {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            acc: vec![0.0; n * (n + 1) / 2],
        }
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        i * (i + 1) / 2 + j
    }

    /// Add one step of increments, one per process.
    pub fn record(&mut self, increments: &[f64]) {
        assert_eq!(increments.len(), self.n);
        for i in 0..self.n {
            for j in 0..=i {
                let k = self.slot(i, j);
                self.acc[k] += increments[i] * increments[j];
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.acc[self.slot(i, j)]
    }
}

/// Increment of the stochastic logarithm: `dY / Y`.
pub fn stochastic_log_step(y: f64, dy: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Positivity { value: y });
    }
    Ok(dy / y)
}

/// `Log(Y)` along a path, starting from 0.
pub fn stochastic_log(y: &ItoPath) -> Result<ItoPath> {
    let mut values = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    values.push(0.0);
    for w in y.values.windows(2) {
        acc += stochastic_log_step(w[0], w[1] - w[0])?;
        values.push(acc);
    }
    ItoPath::new(y.times.clone(), values)
}

fn check_positive(p: &ItoPath) -> Result<()> {
    match p.values.iter().find(|v| !(**v > 0.0)) {
        Some(&v) => Err(Error::Positivity { value: v }),
        None => Ok(()),
    }
}

/// Largest per-step violation of the product rule for stochastic logarithms,
/// `dLog(XY) = dLog(X) + dLog(Y) + d[X,Y]/(XY)`.
///
/// `bracket` is the covariation process `[X,Y]` on the same grid. Feeding
/// the realised covariation makes the rule an algebraic identity (the
/// residual is rounding only); feeding the covariation implied by the SDE
/// coefficients measures how fast the discrete rule converges.
pub fn log_product_residual(x: &ItoPath, y: &ItoPath, bracket: &ItoPath) -> Result<f64> {
    x.same_grid(y)?;
    x.same_grid(bracket)?;
    check_positive(x)?;
    check_positive(y)?;
    let mut worst: f64 = 0.0;
    for k in 0..x.len().saturating_sub(1) {
        let (x0, x1) = (x.values[k], x.values[k + 1]);
        let (y0, y1) = (y.values[k], y.values[k + 1]);
        let dxy = x1 * y1 - x0 * y0;
        let lhs = dxy / (x0 * y0);
        let rhs = (x1 - x0) / x0
            + (y1 - y0) / y0
            + (bracket.values[k + 1] - bracket.values[k]) / (x0 * y0);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Largest per-step violation of `dLog(1/Y) + dLog(Y) + d[1/Y, Y] = 0`.
pub fn inverse_log_residual(y: &ItoPath, bracket: &ItoPath) -> Result<f64> {
    y.same_grid(bracket)?;
    check_positive(y)?;
    let mut worst: f64 = 0.0;
    for k in 0..y.len().saturating_sub(1) {
        let (y0, y1) = (y.values[k], y.values[k + 1]);
        let inv = (1.0 / y1 - 1.0 / y0) * y0;
        let direct = (y1 - y0) / y0;
        let d_bracket = bracket.values[k + 1] - bracket.values[k];
        worst = worst.max((inv + direct + d_bracket).abs());
    }
    Ok(worst)
}

/// Time-stepping schemes for SDEs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepScheme {
    EulerMaruyama,
    Milstein,
    /// Midpoint (Heun-type) rule; converges to the Stratonovich solution.
    StratonovichMidpoint,
}

const FD_REL_STEP: f64 = 1e-6;

fn fd_step(x: f64) -> f64 {
    FD_REL_STEP * x.abs().max(1.0)
}

/// One step of the scalar SDE `dX = b(X,t) dt + s(X,t) dW`.
///
/// For [`StepScheme::StratonovichMidpoint`] `b` is read as a Stratonovich
/// drift; convert it first with [`ito_to_stratonovich_scalar`] when the
/// model is given in Itô form.
pub fn step_scalar(
    scheme: StepScheme,
    x: f64,
    t: f64,
    dt: f64,
    dw: f64,
    drift: impl Fn(f64, f64) -> f64,
    diffusion: impl Fn(f64, f64) -> f64,
) -> f64 {
    let b = drift(x, t);
    let s = diffusion(x, t);
    match scheme {
        StepScheme::EulerMaruyama => x + b * dt + s * dw,
        StepScheme::Milstein => {
            let h = fd_step(x);
            let ds = (diffusion(x + h, t) - diffusion(x - h, t)) / (2.0 * h);
            x + b * dt + s * dw + 0.5 * s * ds * (dw * dw - dt)
        }
        StepScheme::StratonovichMidpoint => {
            let pred = x + b * dt + s * dw;
            let xm = 0.5 * (x + pred);
            let tm = t + 0.5 * dt;
            x + drift(xm, tm) * dt + diffusion(xm, tm) * dw
        }
    }
}

/// Stratonovich drift of a scalar Itô SDE, `b - s s' / 2`, with `s'` by
/// central differences.
pub fn ito_to_stratonovich_scalar(
    drift: impl Fn(f64, f64) -> f64,
    diffusion: impl Fn(f64, f64) -> f64,
) -> impl Fn(f64, f64) -> f64 {
    move |x, t| {
        let h = fd_step(x);
        let ds = (diffusion(x + h, t) - diffusion(x - h, t)) / (2.0 * h);
        drift(x, t) - 0.5 * diffusion(x, t) * ds
    }
}

/// Stratonovich drift of a multi-dimensional Itô SDE
/// `dX = b(X) dt + sum_k s_k(X) dW_k`:
/// `b_i - 1/2 sum_k sum_j s_jk d_j s_ik`.
///
/// `diffusion(x)` returns one column per channel.
pub fn ito_to_stratonovich(
    x: &[f64],
    drift: impl Fn(&[f64]) -> Vec<f64>,
    diffusion: impl Fn(&[f64]) -> Vec<Vec<f64>>,
) -> Vec<f64> {
    let mut out = drift(x);
    let cols = diffusion(x);
    let n = x.len();
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    for j in 0..n {
        if cols.iter().all(|c| c[j] == 0.0) {
            continue;
        }
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        xm[j] = x[j] - h;
        let sp = diffusion(&xp);
        let sm = diffusion(&xm);
        xp[j] = x[j];
        xm[j] = x[j];
        for (k, col) in cols.iter().enumerate() {
            let sjk = col[j];
            if sjk == 0.0 {
                continue;
            }
            for i in 0..n {
                let dsik = (sp[k][i] - sm[k][i]) / (2.0 * h);
                out[i] -= 0.5 * sjk * dsik;
            }
        }
    }
    out
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Two-sided Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic critical value of the KS statistic at level 1%.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}
