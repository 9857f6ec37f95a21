//! Truncated spectral representation of `L2([-1/2, 1/2])` and the operators
//! of the moving frame.
//!
//! Matrices are Galerkin projections `M_mn = <phi_m| A |phi_n>` evaluated by
//! Gauss–Legendre quadrature with `2N + 32` nodes. The ordered monomial
//! `x^j p^k` is projected as `int conj(phi_m) x^j (-i hbar d/dx)^k phi_n` and
//! then replaced by its hermitian part, which is the projection of the
//! symmetrised product `{x^j, p^k}/2` whenever the boundary terms vanish.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::boundary::{BoundaryModel, FrameState};
use crate::error::{Error, Result};
use crate::linalg::{c, norm, re, CMatrix, C64, I, ZERO};
use crate::quadrature::GaussLegendre;

/// Highest derivative order kept in the evaluation tables.
pub const MAX_P_POWER: usize = 4;

/// Tolerance on the hermiticity defect of assembled operators, relative to
/// the largest entry.
pub const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BasisKind {
    /// `sqrt(2) sin(n pi (x + 1/2))`, `n = 1..=N`.
    DirichletSine,
    /// `exp(i (2 pi k - theta) x)` with `phi(-1/2) = e^{i theta} phi(1/2)`.
    /// Modes are ordered `k = 0, -1, 1, -2, 2, ...`.
    QuasiPeriodic { theta: f64 },
}

impl BasisKind {
    pub fn name(&self) -> &'static str {
        match self {
            BasisKind::DirichletSine => "dirichlet",
            BasisKind::QuasiPeriodic { .. } => "quasi-periodic",
        }
    }

    pub fn theta(&self) -> Option<f64> {
        match *self {
            BasisKind::QuasiPeriodic { theta } => Some(theta),
            BasisKind::DirichletSine => None,
        }
    }
}

/// Basis functions and their derivatives tabulated on the quadrature grid.
#[derive(Clone, Debug)]
pub struct Basis {
    kind: BasisKind,
    n: usize,
    hbar: f64,
    quad: GaussLegendre,
    /// Wavenumber of each mode (`n pi` or `2 pi k - theta`).
    wavenumbers: Vec<f64>,
    /// `tables[d][mode * q + node]` = `d`-th derivative of the mode.
    tables: Vec<Vec<C64>>,
}

impl Basis {
    pub fn new(kind: BasisKind, n: usize, hbar: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("basis dimension must be positive"));
        }
        if !(hbar >= 0.0) {
            return Err(Error::InvalidParameter("hbar must be non-negative"));
        }
        let quad = GaussLegendre::new(2 * n + 32, -0.5, 0.5);
        let wavenumbers: Vec<f64> = match kind {
            BasisKind::DirichletSine => (1..=n).map(|j| j as f64 * PI).collect(),
            BasisKind::QuasiPeriodic { theta } => (0..n)
                .map(|j| 2.0 * PI * fourier_index(j) as f64 - theta)
                .collect(),
        };
        let q = quad.len();
        let mut tables = vec![vec![ZERO; n * q]; MAX_P_POWER + 1];
        for (mode, &kw) in wavenumbers.iter().enumerate() {
            for (node, &x) in quad.nodes.iter().enumerate() {
                for (d, table) in tables.iter_mut().enumerate() {
                    table[mode * q + node] = mode_value(kind, kw, d, x);
                }
            }
        }
        Ok(Self {
            kind,
            n,
            hbar,
            quad,
            wavenumbers,
            tables,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn quadrature(&self) -> &GaussLegendre {
        &self.quad
    }

    /// `d`-th derivative of mode `j` at `x`.
    pub fn mode(&self, j: usize, d: usize, x: f64) -> C64 {
        mode_value(self.kind, self.wavenumbers[j], d, x)
    }

    /// `sum_j coeffs[j] phi_j^{(d)}(x)`.
    pub fn eval(&self, coeffs: &[C64], d: usize, x: f64) -> C64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(j, cj)| cj * self.mode(j, d, x))
            .sum()
    }

    /// Gram matrix under the flat measure.
    pub fn gram(&self) -> CMatrix {
        self.project(0, 0, |_| 1.0)
    }

    /// `int conj(phi_m) w(x) x^j phi_n^{(k)}` on the quadrature grid.
    fn project(&self, j: u32, k: usize, weight: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.n;
        let q = self.quad.len();
        let left: Vec<C64> = {
            let t0 = &self.tables[0];
            let mut v = vec![ZERO; n * q];
            for node in 0..q {
                let x = self.quad.nodes[node];
                let w = self.quad.weights[node] * weight(x) * x.powi(j as i32);
                for m in 0..n {
                    v[m * q + node] = t0[m * q + node].conj() * w;
                }
            }
            v
        };
        let right = &self.tables[k];
        let mut out = CMatrix::zeros(n);
        for m in 0..n {
            let lrow = &left[m * q..(m + 1) * q];
            for col in 0..n {
                let rrow = &right[col * q..(col + 1) * q];
                out[(m, col)] = lrow.iter().zip(rrow).fold(ZERO, |acc, (a, b)| acc + a * b);
            }
        }
        out
    }

    /// Projection of the symmetrised monomial `{x^j, p^k}/2`.
    pub fn monomial(&self, j: u32, k: usize) -> Result<CMatrix> {
        if k > MAX_P_POWER {
            return Err(Error::Unsupported("momentum powers above 4"));
        }
        let phase = (-I * self.hbar).powu(k as u32);
        let m = self.project(j, k, |_| 1.0).scale(phase);
        Ok(m.hermitian_part())
    }

    /// Projection of a multiplication operator `f(x)`.
    pub fn multiplication(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        self.project(0, 0, f).hermitian_part()
    }

    pub fn position(&self) -> CMatrix {
        self.monomial(1, 0).expect("k = 0")
    }

    pub fn momentum(&self) -> CMatrix {
        self.monomial(0, 1).expect("k = 1")
    }

    /// Dilation generator `(XP + PX)/2`.
    pub fn dilation(&self) -> CMatrix {
        self.monomial(1, 1).expect("k = 1")
    }

    /// Largest `|| ([G,P] - i hbar P) e_j ||` over the lowest `N/4` basis
    /// vectors.
    pub fn commutator_residual(&self) -> f64 {
        let defect = self.commutator_defect();
        let count = (self.n / 4).max(1);
        (0..count)
            .map(|j| norm(&defect.column(j)))
            .fold(0.0, f64::max)
    }

    /// `|| ([G,P] - i hbar P) v ||` for a given coefficient vector.
    pub fn commutator_residual_on(&self, v: &[C64]) -> f64 {
        norm(&self.commutator_defect().apply(v))
    }

    /// `[G,P] - i hbar P` as a matrix.
    pub fn commutator_defect(&self) -> CMatrix {
        let g = self.dilation();
        let p = self.momentum();
        let mut d = g.commutator(&p);
        d.add_scaled(-I * self.hbar, &p);
        d
    }

    /// Coefficients of `f` by projection.
    pub fn project_function(&self, f: impl Fn(f64) -> C64) -> Vec<C64> {
        let q = self.quad.len();
        let vals: Vec<C64> = self.quad.nodes.iter().map(|&x| f(x)).collect();
        (0..self.n)
            .map(|m| {
                (0..q)
                    .map(|node| {
                        self.tables[0][m * q + node].conj() * vals[node] * self.quad.weights[node]
                    })
                    .sum()
            })
            .collect()
    }
}

/// `0, -1, 1, -2, 2, ...`
pub fn fourier_index(j: usize) -> i64 {
    let h = j.div_ceil(2) as i64;
    if j % 2 == 1 {
        -h
    } else {
        h
    }
}

fn mode_value(kind: BasisKind, kw: f64, d: usize, x: f64) -> C64 {
    match kind {
        BasisKind::DirichletSine => {
            let arg = kw * (x + 0.5) + d as f64 * FRAC_PI_2;
            re(SQRT_2 * kw.powi(d as i32) * arg.sin())
        }
        BasisKind::QuasiPeriodic { .. } => {
            let (s, co) = (kw * x).sin_cos();
            (I * kw).powu(d as u32) * c(co, s)
        }
    }
}

/// Real-valued function of position, used for potentials and observables.
#[derive(Clone)]
pub enum PositionFn {
    Gaussian {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    Cosine {
        amplitude: f64,
        wavenumber: f64,
        phase: f64,
    },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl PositionFn {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            PositionFn::Gaussian {
                amplitude,
                center,
                width,
            } => {
                let z = (y - center) / width;
                amplitude * (-0.5 * z * z).exp()
            }
            PositionFn::Cosine {
                amplitude,
                wavenumber,
                phase,
            } => amplitude * (wavenumber * y + phase).cos(),
            PositionFn::Custom(f) => f(y),
        }
    }
}

impl fmt::Debug for PositionFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PositionFn::Gaussian {
                amplitude,
                center,
                width,
            } => write!(f, "Gaussian({amplitude}, {center}, {width})"),
            PositionFn::Cosine {
                amplitude,
                wavenumber,
                phase,
            } => write!(f, "Cosine({amplitude}, {wavenumber}, {phase})"),
            PositionFn::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// `coeff * {x^x_pow, p^p_pow}/2`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub x_pow: u32,
    pub p_pow: u32,
}

impl Term {
    pub const fn new(coeff: f64, x_pow: u32, p_pow: u32) -> Self {
        Self {
            coeff,
            x_pow,
            p_pow,
        }
    }
}

/// Operator on the physical interval: a polynomial in `(X, P)` plus an
/// optional multiplication operator.
#[derive(Clone, Debug)]
pub struct OperatorSpec {
    pub label: &'static str,
    pub terms: Vec<Term>,
    pub potential: Option<PositionFn>,
}

impl OperatorSpec {
    pub fn new(label: &'static str, terms: Vec<Term>) -> Self {
        Self {
            label,
            terms,
            potential: None,
        }
    }

    pub fn with_potential(mut self, v: PositionFn) -> Self {
        self.potential = Some(v);
        self
    }

    pub fn identity() -> Self {
        Self::new("identity", vec![Term::new(1.0, 0, 0)])
    }

    pub fn position() -> Self {
        Self::new("X", vec![Term::new(1.0, 1, 0)])
    }

    pub fn momentum() -> Self {
        Self::new("P", vec![Term::new(1.0, 0, 1)])
    }

    /// `P^2 / (2 mass)`
    pub fn free(mass: f64) -> Self {
        Self::new("H", vec![Term::new(0.5 / mass, 0, 2)])
    }

    /// `P^2/(2 mass) + mass omega^2 X^2 / 2`
    pub fn harmonic(mass: f64, omega: f64) -> Self {
        Self::new(
            "H",
            vec![
                Term::new(0.5 / mass, 0, 2),
                Term::new(0.5 * mass * omega * omega, 2, 0),
            ],
        )
    }

    /// The quadratic form in `(X, P)` if the operator has no potential and
    /// degree at most two: `(xx, pp, xp, x, p, one)` for
    /// `xx X^2 + pp P^2 + xp {X,P}/2 + x X + p P + one`.
    pub fn quadratic_form(&self) -> Option<[f64; 6]> {
        if self.potential.is_some() {
            return None;
        }
        let mut out = [0.0; 6];
        for t in &self.terms {
            let slot = match (t.x_pow, t.p_pow) {
                (2, 0) => 0,
                (0, 2) => 1,
                (1, 1) => 2,
                (1, 0) => 3,
                (0, 1) => 4,
                (0, 0) => 5,
                _ => return None,
            };
            out[slot] += t.coeff;
        }
        Some(out)
    }
}

/// Translation and dilation of the frame: `y = len * x + m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub m: f64,
    pub len: f64,
    pub sign: f64,
}

impl Frame {
    pub const IDENTITY: Frame = Frame {
        m: 0.0,
        len: 1.0,
        sign: -1.0,
    };

    pub fn from_state(s: &FrameState) -> Self {
        Self {
            m: s.m,
            len: s.length(),
            sign: s.sign,
        }
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// Coefficients entering the effective generator at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Drive {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
    /// Derivatives of the endpoint diffusions with respect to their own
    /// endpoint.
    pub sigma_slope: [f64; 2],
}

impl Drive {
    /// Coefficients of `model` at boundary state `s`.
    pub fn at(model: &BoundaryModel, s: &FrameState) -> Self {
        let (sigma_a, sigma_b) = model.sigmas(s);
        Self {
            mu1: model.mu1(s),
            mu2: model.mu2(s),
            sigma_a,
            sigma_b,
            sigma_slope: model.sigma_slopes(),
        }
    }
}

/// Noise channel signs: `F_a = P/2 + sign G`, `F_b = P/2 - sign G`.
pub const EPSILON: [f64; 2] = [1.0, -1.0];

/// Noise parts of the midpoint and length increments,
/// `dX1 = (sigma_a dW_a + sigma_b dW_b) / 2` and
/// `dX2 = sign (sigma_a dW_a - sigma_b dW_b)`.
pub fn frame_increments(sigma_a: f64, sigma_b: f64, sign: f64, dw: [f64; 2]) -> (f64, f64) {
    let (da, db) = (sigma_a * dw[0], sigma_b * dw[1]);
    (0.5 * (da + db), sign * (da - db))
}

/// Effective generator at one frame, kept in factored form
/// `H' = K + p_coeff P + g_coeff G`, `F_k = P/2 + eps_k sign G` so that
/// steppers can apply it to vectors without assembling dense matrices.
#[derive(Clone, Debug)]
pub struct FrameOperators<'a> {
    asm: &'a Assembler,
    pub frame: Frame,
    pub drive: Drive,
    /// Transformed Hamiltonian.
    pub k: CMatrix,
    pub p_coeff: f64,
    pub g_coeff: f64,
    /// `sigma_k / len`.
    pub coupling: [f64; 2],
    pub hbar: f64,
}

impl FrameOperators<'_> {
    pub fn x(&self) -> &CMatrix {
        &self.asm.x
    }

    pub fn p(&self) -> &CMatrix {
        &self.asm.p
    }

    pub fn g(&self) -> &CMatrix {
        &self.asm.g
    }

    /// Truncated product `P P`.
    pub fn pp(&self) -> &CMatrix {
        &self.asm.pp
    }

    /// Truncated `P G + G P`.
    pub fn pg_gp(&self) -> &CMatrix {
        &self.asm.pg_gp
    }

    /// Truncated product `G G`.
    pub fn gg(&self) -> &CMatrix {
        &self.asm.gg
    }

    /// Coefficient of `G` in `F_k`.
    #[inline]
    pub fn f_g_coeff(&self, channel: usize) -> f64 {
        EPSILON[channel] * self.frame.sign
    }

    pub fn h_eff(&self) -> CMatrix {
        let mut h = self.k.clone();
        h.add_scaled(re(self.p_coeff), &self.asm.p);
        h.add_scaled(re(self.g_coeff), &self.asm.g);
        h
    }

    pub fn f(&self, channel: usize) -> CMatrix {
        let mut f = self.asm.p.scale_re(0.5);
        f.add_scaled(re(self.f_g_coeff(channel)), &self.asm.g);
        f
    }

    /// `F_k^2` as a truncated matrix product.
    pub fn f_sq(&self, channel: usize) -> CMatrix {
        let e = self.f_g_coeff(channel);
        let mut f = self.asm.pp.scale_re(0.25);
        f.add_scaled(re(0.5 * e), &self.asm.pg_gp);
        f.add_scaled(re(e * e), &self.asm.gg);
        f
    }

    /// `(K v, P v, G v)`
    pub fn apply_kpg(&self, v: &[C64]) -> [Vec<C64>; 3] {
        [self.k.apply(v), self.asm.p.apply(v), self.asm.g.apply(v)]
    }

    /// `F_k^2 v` for both channels.
    pub fn apply_f_sq(&self, v: &[C64]) -> [Vec<C64>; 2] {
        let pp = self.asm.pp.apply(v);
        let pg = self.asm.pg_gp.apply(v);
        let gg = self.asm.gg.apply(v);
        [0, 1].map(|ch| {
            let e = self.f_g_coeff(ch);
            pp.iter()
                .zip(&pg)
                .zip(&gg)
                .map(|((a, b), g)| a * 0.25 + b * (0.5 * e) + g * (e * e))
                .collect()
        })
    }

    /// `sum_k (i coupling_k / hbar) F_k dW_k`, the noise term of the state
    /// equation written per channel.
    pub fn noise_operator(&self, dw: [f64; 2]) -> CMatrix {
        let mut out = CMatrix::zeros(self.k.dim());
        for ch in 0..2 {
            out.add_scaled(I * (self.coupling[ch] * dw[ch] / self.hbar), &self.f(ch));
        }
        out
    }

    /// `(i / (hbar len)) (P dX1 + G dX2)`, the same noise term written with
    /// the increments of the midpoint and of the length.
    pub fn frame_noise_operator(&self, dx1: f64, dx2: f64) -> CMatrix {
        let scale = I / (self.hbar * self.frame.len);
        let mut out = self.asm.p.scale(scale * dx1);
        out.add_scaled(scale * dx2, &self.asm.g);
        out
    }

    /// Extra Stratonovich drift `1/2 sum_k sigma_k d(coupling_k)/d(endpoint_k) F_k`
    /// as `(P, G)` coefficients. It comes from the couplings depending on
    /// the endpoints they are driven by.
    pub fn stratonovich_shift(&self) -> (f64, f64) {
        let d = &self.drive;
        let len = self.frame.len;
        let sigma = [d.sigma_a, d.sigma_b];
        // d len / d a = sign, d len / d b = -sign.
        let dlen = [self.frame.sign, -self.frame.sign];
        let (mut p, mut g) = (0.0, 0.0);
        for ch in 0..2 {
            let slope = d.sigma_slope[ch] / len - sigma[ch] * dlen[ch] / (len * len);
            let c = 0.5 * sigma[ch] * slope;
            p += 0.5 * c;
            g += self.f_g_coeff(ch) * c;
        }
        (p, g)
    }

    /// `-(i/hbar) (H_s dt - sum_k coupling_k F_k dW_k)`, the generator of
    /// one Stratonovich step, where `H_s` is `H'` plus
    /// [`stratonovich_shift`](Self::stratonovich_shift).
    pub fn stratonovich_generator(&self, dt: f64, dw: [f64; 2]) -> CMatrix {
        let (dp, dg) = self.stratonovich_shift();
        let mut p_total = (self.p_coeff + dp) * dt;
        let mut g_total = (self.g_coeff + dg) * dt;
        for ch in 0..2 {
            p_total -= 0.5 * self.coupling[ch] * dw[ch];
            g_total -= self.f_g_coeff(ch) * self.coupling[ch] * dw[ch];
        }
        let scale = -I / self.hbar;
        let mut a = self.k.scale(scale * dt);
        a.add_scaled(scale * p_total, &self.asm.p);
        a.add_scaled(scale * g_total, &self.asm.g);
        a
    }
}

/// Builds transformed operators for a fixed basis, caching the projected
/// monomials it has needed so far.
#[derive(Clone, Debug)]
pub struct Assembler {
    basis: Basis,
    hamiltonian: OperatorSpec,
    cache: BTreeMap<(u32, u32), CMatrix>,
    x: CMatrix,
    p: CMatrix,
    g: CMatrix,
    pp: CMatrix,
    pg_gp: CMatrix,
    gg: CMatrix,
}

impl Assembler {
    pub fn new(basis: Basis, hamiltonian: OperatorSpec) -> Result<Self> {
        let x = basis.position();
        let p = basis.momentum();
        let g = basis.dilation();
        let pp = p.matmul(&p);
        let pg_gp = p.anticommutator(&g);
        let gg = g.matmul(&g);
        let mut a = Self {
            basis,
            hamiltonian,
            cache: BTreeMap::new(),
            x,
            p,
            g,
            pp,
            pg_gp,
            gg,
        };
        let spec = a.hamiltonian.clone();
        a.warm(&spec)?;
        Ok(a)
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn hamiltonian(&self) -> &OperatorSpec {
        &self.hamiltonian
    }

    pub fn x(&self) -> &CMatrix {
        &self.x
    }

    pub fn p(&self) -> &CMatrix {
        &self.p
    }

    pub fn g(&self) -> &CMatrix {
        &self.g
    }

    /// Precompute every monomial the transformed `spec` can involve.
    pub fn warm(&mut self, spec: &OperatorSpec) -> Result<()> {
        for t in &spec.terms {
            for i in 0..=t.x_pow {
                self.monomial(i, t.p_pow)?;
            }
        }
        Ok(())
    }

    fn monomial(&mut self, j: u32, k: u32) -> Result<&CMatrix> {
        if !self.cache.contains_key(&(j, k)) {
            let m = self.basis.monomial(j, k as usize)?;
            self.cache.insert((j, k), m);
        }
        Ok(&self.cache[&(j, k)])
    }

    fn cached(&self, j: u32, k: u32) -> Result<&CMatrix> {
        self.cache
            .get(&(j, k))
            .ok_or(Error::Unsupported("monomial not prepared; call warm() first"))
    }

    /// `W A W^dagger`: substitutes `X -> len X + m`, `P -> P / len` and
    /// evaluates the potential at `len x + m`.
    pub fn transform(&self, spec: &OperatorSpec, frame: Frame) -> Result<CMatrix> {
        let n = self.basis.dim();
        let mut out = CMatrix::zeros(n);
        for t in &spec.terms {
            let pscale = frame.len.powi(-(t.p_pow as i32));
            for i in 0..=t.x_pow {
                let coeff = t.coeff
                    * pscale
                    * binomial(t.x_pow, i)
                    * frame.len.powi(i as i32)
                    * frame.m.powi((t.x_pow - i) as i32);
                if coeff != 0.0 {
                    out.add_scaled(re(coeff), self.cached(i, t.p_pow)?);
                }
            }
        }
        if let Some(v) = &spec.potential {
            out += &self.basis.multiplication(|x| v.eval(frame.len * x + frame.m));
        }
        let defect = out.hermiticity_defect();
        if defect > HERMITICITY_TOL * out.max_abs().max(1.0) {
            return Err(Error::NonHermitian {
                label: spec.label,
                defect,
            });
        }
        Ok(out)
    }

    /// Mutable variant of [`Assembler::transform`] that prepares missing
    /// monomials on the fly.
    pub fn transform_mut(&mut self, spec: &OperatorSpec, frame: Frame) -> Result<CMatrix> {
        self.warm(spec)?;
        self.transform(spec, frame)
    }

    /// Transformed Hamiltonian.
    pub fn k(&self, frame: Frame) -> Result<CMatrix> {
        self.transform(&self.hamiltonian, frame)
    }

    /// Effective Hamiltonian and noise operators at `frame`:
    ///
    /// `H' = K - (mu1/len) P - mu2 G + sign (sigma_a^2 - sigma_b^2)/(2 len^2) P`,
    /// `F_k = P/2 + eps_k sign G`.
    pub fn effective(&self, frame: Frame, drive: Drive) -> Result<FrameOperators<'_>> {
        let k = self.k(frame)?;
        Ok(self.effective_with_k(frame, drive, k))
    }

    pub fn effective_with_k(&self, frame: Frame, drive: Drive, k: CMatrix) -> FrameOperators<'_> {
        let len = frame.len;
        let p_coeff = -drive.mu1 / len
            + frame.sign * (drive.sigma_a * drive.sigma_a - drive.sigma_b * drive.sigma_b)
                / (2.0 * len * len);
        FrameOperators {
            asm: self,
            frame,
            drive,
            k,
            p_coeff,
            g_coeff: -drive.mu2,
            coupling: [drive.sigma_a / len, drive.sigma_b / len],
            hbar: self.basis.hbar(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    fn dirichlet(n: usize) -> Basis {
        Basis::new(BasisKind::DirichletSine, n, 1.0).unwrap()
    }

    fn fourier(n: usize, theta: f64) -> Basis {
        Basis::new(BasisKind::QuasiPeriodic { theta }, n, 1.0).unwrap()
    }

    #[test]
    fn boundary_conditions() {
        let b = dirichlet(1);
        assert!(b.mode(0, 0, -0.5).norm() < 1e-12);
        assert!(b.mode(0, 0, 0.5).norm() < 1e-12);
        let f = fourier(3, 0.0);
        for j in 0..3 {
            assert!((f.mode(j, 0, -0.5) - f.mode(j, 0, 0.5)).norm() < 1e-12);
        }
        let theta = 0.7;
        let f = fourier(5, theta);
        for j in 0..5 {
            let lhs = f.mode(j, 0, -0.5);
            let rhs = C64::from_polar(1.0, theta) * f.mode(j, 0, 0.5);
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn gram_is_identity() {
        for b in [dirichlet(32), fourier(32, 0.0), fourier(33, 1.3)] {
            assert!(b.gram().max_abs_diff(&CMatrix::identity(32.max(b.dim()))) < 1e-12);
        }
    }

    #[test]
    fn dirichlet_position_element() {
        let x = dirichlet(4).position();
        let expect = -16.0 / (9.0 * PI * PI);
        assert!((x[(0, 1)].re - expect).abs() < 1e-14);
        for b in [dirichlet(8), fourier(8, 0.0)] {
            let x = b.position();
            for j in 0..8 {
                assert!(x[(j, j)].norm() < 1e-14);
            }
        }
    }

    #[test]
    fn fourier_momentum_is_diagonal() {
        let b = fourier(7, 0.0);
        let p = b.momentum();
        for i in 0..7 {
            for j in 0..7 {
                let expect = if i == j {
                    2.0 * PI * fourier_index(i) as f64
                } else {
                    0.0
                };
                assert!((p[(i, j)] - re(expect)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn fourier_position_matches_closed_form() {
        // X_mn = (-1)^{k_n - k_m} / (2 pi i (k_n - k_m)) for m != n.
        let b = fourier(9, 0.4);
        let x = b.position();
        for m in 0..9 {
            for n in 0..9 {
                let d = fourier_index(n) - fourier_index(m);
                let expect = if d == 0 {
                    ZERO
                } else {
                    let s = if d % 2 == 0 { 1.0 } else { -1.0 };
                    re(s) / (I * 2.0 * PI * d as f64)
                };
                assert!((x[(m, n)] - expect).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn operators_are_hermitian() {
        for b in [dirichlet(24), fourier(24, 0.0), fourier(24, 2.1)] {
            for (name, m) in [
                ("X", b.position()),
                ("P", b.momentum()),
                ("G", b.dilation()),
                ("P2", b.monomial(0, 2).unwrap()),
            ] {
                assert!(m.hermiticity_defect() < 1e-12, "{name}");
            }
            let g = b.dilation();
            for j in 0..24 {
                assert!(g[(j, j)].im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dirichlet_momentum_is_hermitian_before_symmetrising() {
        // The boundary terms vanish, so the raw projection is already hermitian.
        let b = dirichlet(16);
        let raw = b.project(0, 1, |_| 1.0).scale(-I);
        assert!(raw.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn free_particle_spectrum() {
        let b = dirichlet(64);
        let a = Assembler::new(b, OperatorSpec::free(1.0)).unwrap();
        let k = a.k(Frame::IDENTITY).unwrap();
        for n in 1..=16 {
            let e = k[(n - 1, n - 1)].re;
            let expect = PI * PI * (n * n) as f64 / 2.0;
            assert!((e - expect).abs() < 1e-8 * expect.max(1.0), "n={n}");
        }
        let two = a.k(Frame { m: 0.3, len: 2.0, sign: -1.0 }).unwrap();
        assert!(two.max_abs_diff(&k.scale_re(0.25)) < 1e-9);
    }

    #[test]
    fn commutator_residual_converges() {
        // A bump vanishing to all orders at the endpoints, so the boundary
        // terms of the commutator vanish in the continuum.
        let bump = |x: f64| {
            let u = 1.0 - 4.0 * x * x;
            if u <= 0.0 {
                ZERO
            } else {
                re((-1.0 / u).exp())
            }
        };
        let smooth = |b: &Basis| b.project_function(bump);
        let r32 = {
            let b = fourier(32, 0.0);
            b.commutator_residual_on(&smooth(&b))
        };
        let r64 = {
            let b = fourier(64, 0.0);
            b.commutator_residual_on(&smooth(&b))
        };
        assert!(r64 < r32, "{r64} vs {r32}");
        // Lowest Dirichlet mode: the truncated product pushes the defect into
        // the spectral tail, so the low-mode part shrinks under doubling.
        let low_part = |n: usize| {
            let d = dirichlet(n).commutator_defect().column(0);
            norm(&d[..n / 4])
        };
        let (l32, l64, l128) = (low_part(32), low_part(64), low_part(128));
        assert!(l128 < l64 && l64 < l32, "{l32} {l64} {l128}");
        let d = dirichlet(128).commutator_defect().column(0);
        assert!(l128 < 0.01 * norm(&d));
        // hbar = 0: the residual is the plain commutator norm.
        let b0 = Basis::new(BasisKind::DirichletSine, 16, 0.0).unwrap();
        assert!(b0.commutator_residual() < 1e-300);
    }

    /// Oracle for `W A W^dagger`: integrate directly on the physical interval
    /// with `(W^dagger phi)(y) = phi((y - m)/len)/sqrt(len)`.
    fn conjugated(b: &Basis, frame: Frame, x_pow: i32, p_pow: usize) -> CMatrix {
        let (lo, hi) = (frame.m - 0.5 * frame.len, frame.m + 0.5 * frame.len);
        let q = GaussLegendre::new(200, lo, hi);
        let n = b.dim();
        let s = frame.len.sqrt();
        let raw = CMatrix::from_fn(n, |i, j| {
            let mut acc = ZERO;
            for (&y, &w) in q.nodes.iter().zip(&q.weights) {
                let x = (y - frame.m) / frame.len;
                let left = b.mode(i, 0, x) / s;
                let right = b.mode(j, p_pow, x) / s / frame.len.powi(p_pow as i32);
                acc += left.conj() * y.powi(x_pow) * (-I).powu(p_pow as u32) * right * w;
            }
            acc
        });
        raw.hermitian_part()
    }

    #[test]
    fn position_transform_matches_conjugation_oracle() {
        let b = dirichlet(12);
        let mut a = Assembler::new(b.clone(), OperatorSpec::free(1.0)).unwrap();
        let frame = Frame {
            m: 0.3,
            len: 2.0,
            sign: -1.0,
        };
        let xt = a.transform_mut(&OperatorSpec::position(), frame).unwrap();
        let mut expect = b.position().scale_re(2.0);
        expect.add_identity(re(0.3));
        assert!(xt.max_abs_diff(&expect) < 1e-13);
        assert!(xt.max_abs_diff(&conjugated(&b, frame, 1, 0)) < 1e-12);
    }

    #[test]
    fn transforms_match_conjugation_oracle() {
        let frame = Frame {
            m: -0.4,
            len: 1.7,
            sign: 1.0,
        };
        for b in [dirichlet(10), fourier(10, 0.9)] {
            let mut a = Assembler::new(b.clone(), OperatorSpec::free(1.0)).unwrap();
            for (xp, pp) in [(0, 0), (1, 0), (0, 1), (0, 2), (2, 0), (1, 1), (2, 2), (3, 1), (4, 0)] {
                let spec = OperatorSpec::new("A", vec![Term::new(1.0, xp, pp)]);
                let got = a.transform_mut(&spec, frame).unwrap();
                let want = conjugated(&b, frame, xp as i32, pp as usize);
                let scale = want.max_abs().max(1.0);
                assert!(got.max_abs_diff(&want) < 1e-11 * scale, "x^{xp} p^{pp}");
            }
        }
    }

    #[test]
    fn harmonic_potential_matches_function_form() {
        let omega = 3.0;
        let b = dirichlet(16);
        let frame = Frame {
            m: 0.2,
            len: 1.5,
            sign: -1.0,
        };
        let poly = Assembler::new(b.clone(), OperatorSpec::harmonic(1.0, omega)).unwrap();
        let k_poly = poly.k(frame).unwrap();
        let via_fn = OperatorSpec::free(1.0).with_potential(PositionFn::Custom(Arc::new(
            move |y| 0.5 * omega * omega * y * y,
        )));
        let a = Assembler::new(b, via_fn.clone()).unwrap();
        let k_fn = a.transform(&via_fn, frame).unwrap();
        assert!(k_poly.max_abs_diff(&k_fn) < 1e-12);
    }

    #[test]
    fn identity_frame_leaves_operator_unchanged() {
        let b = fourier(8, 0.0);
        let a = Assembler::new(b.clone(), OperatorSpec::harmonic(1.0, 2.0)).unwrap();
        let h = a.k(Frame::IDENTITY).unwrap();
        let mut direct = b.monomial(0, 2).unwrap().scale_re(0.5);
        direct.add_scaled(re(2.0), &b.monomial(2, 0).unwrap());
        assert!(h.max_abs_diff(&direct) < 1e-13);
    }

    #[test]
    fn effective_operator_examples() {
        let b = dirichlet(12);
        let a = Assembler::new(b, OperatorSpec::free(1.0)).unwrap();
        let frame = Frame {
            m: 0.0,
            len: 1.0,
            sign: -1.0,
        };
        // Equal noises and no drift: H' = K.
        let ops = a
            .effective(
                frame,
                Drive {
                    sigma_a: 0.7,
                    sigma_b: 0.7,
                    ..Default::default()
                },
            )
            .unwrap();
        assert!(ops.h_eff().max_abs_diff(&ops.k) < 1e-15);

        // Overdamped D = gamma = 1 at l = 1: mu2 = -1, H' = K + G,
        // F_k = P/2 - eps_k G.
        let ops = a
            .effective(
                frame,
                Drive {
                    mu1: 0.0,
                    mu2: -1.0,
                    sigma_a: 1.0,
                    sigma_b: 1.0,
                    ..Default::default()
                },
            )
            .unwrap();
        assert!(ops.h_eff().max_abs_diff(&(&ops.k + a.g())) < 1e-14);
        for (i, eps) in EPSILON.iter().enumerate() {
            let mut want = a.p().scale_re(0.5);
            want.add_scaled(re(-eps), a.g());
            assert!(ops.f(i).max_abs_diff(&want) < 1e-15);
            assert!(ops.f_sq(i).max_abs_diff(&ops.f(i).matmul(&ops.f(i))) < 1e-10);
        }

        // Dyson: H' = K - mu2 G - (sa^2 - sb^2)/(2 l^2) P with
        // mu2 = (4 beta - sa^2 - sb^2)/(2 l^2) and sign = -1.
        let (beta, sa, sb, l) = (0.8, 1.1, 0.4, 1.6);
        let mu2 = crate::boundary::dyson_mu2(beta, sa, sb, l);
        let frame = Frame {
            m: 0.1,
            len: l,
            sign: -1.0,
        };
        let ops = a
            .effective(
                frame,
                Drive {
                    mu1: 0.0,
                    mu2,
                    sigma_a: sa,
                    sigma_b: sb,
                    ..Default::default()
                },
            )
            .unwrap();
        let mut want = ops.k.clone();
        want.add_scaled(re(-(4.0 * beta - sa * sa - sb * sb) / (2.0 * l * l)), a.g());
        want.add_scaled(re(-(sa * sa - sb * sb) / (2.0 * l * l)), a.p());
        assert!(ops.h_eff().max_abs_diff(&want) < 1e-13);
        assert!(ops.h_eff().hermiticity_defect() < 1e-12);
    }

    #[test]
    fn projection_reconstructs_smooth_function() {
        let b = dirichlet(48);
        let f = |x: f64| re((PI * (x + 0.5)).sin().powi(3));
        let coeffs = b.project_function(f);
        let pts: Vec<f64> = (0..11).map(|i| -0.5 + 0.1 * i as f64).collect();
        let got: Vec<C64> = pts.iter().map(|&x| b.eval(&coeffs, 0, x)).collect();
        let want: Vec<C64> = pts.iter().map(|&x| f(x)).collect();
        assert!(max_abs_diff(&got, &want) < 1e-12);
    }

    #[test]
    fn stratonovich_drift_is_the_realised_velocity() {
        use crate::boundary::{Affine, BoundaryModel, FrameState};
        let asm = Assembler::new(dirichlet(8), OperatorSpec::free(1.0)).unwrap();
        let model = BoundaryModel::Generic {
            mu_a: Affine::constant(0.3),
            sigma_a: Affine { c: 0.9, x: 0.4, t: 0.0 },
            mu_b: Affine::constant(-0.2),
            sigma_b: Affine::constant(0.5),
        };
        let s = FrameState::new(-0.6, 0.7, 1.0).unwrap();
        let ops = asm.effective(Frame::from_state(&s), Drive::at(&model, &s)).unwrap();
        let (dp, dg) = ops.stratonovich_shift();
        // Stratonovich drifts of the endpoints: mu - sigma sigma' / 2.
        let (sa, sb, sa1) = (0.9 + 0.4 * -0.6, 0.5, 0.4);
        let strat_a = 0.3 - 0.5 * sa * sa1;
        let strat_b = -0.2;
        let len = 1.3;
        let dlen = -(strat_a - strat_b);
        assert!((ops.g_coeff + dg + dlen / len).abs() < 1e-14);
        // P part: -sign (sa^2 - sb^2)/(4 len^2) plus sa sa' / (4 len), the
        // latter turning mu1 into the Stratonovich drift of the midpoint.
        let want = -0.25 * -1.0 * (sa * sa - sb * sb) / (len * len) + 0.25 * sa * sa1 / len;
        assert!((dp - want).abs() < 1e-14, "{dp} {want}");
    }

    #[test]
    fn stratonovich_noise_matches_ito_sign() {
        let asm = Assembler::new(dirichlet(6), OperatorSpec::free(1.0)).unwrap();
        let frame = Frame {
            m: 0.2,
            len: 1.4,
            sign: -1.0,
        };
        let drive = Drive {
            sigma_a: 0.6,
            sigma_b: 0.3,
            ..Default::default()
        };
        let ops = asm.effective(frame, drive).unwrap();
        let dw = [0.7, -0.4];
        let a = ops.stratonovich_generator(0.0, dw);
        let mut want = CMatrix::zeros(6);
        for ch in 0..2 {
            want.add_scaled(I * (ops.coupling[ch] * dw[ch]), &ops.f(ch));
        }
        assert!(a.max_abs_diff(&want) < 1e-15);
    }
}
