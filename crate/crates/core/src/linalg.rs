//! Dense complex linear algebra for the small (N <= 256) spectral operators.
//!
//! Matrices are square and stored row-major. Nothing here is tuned beyond a
//! cache-friendly `i-k-j` product; the operators are small enough that the
//! matrix exponential dominates and is kept at low Padé order for small
//! generators.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `<x|y>`, antilinear in the first argument.
pub fn inner(x: &[C64], y: &[C64]) -> C64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).fold(ZERO, |acc, (a, b)| acc + a.conj() * b)
}

pub fn norm_sqr(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm(x: &[C64]) -> f64 {
    norm_sqr(x).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs_diff(x: &[C64], y: &[C64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}

/// Square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![ZERO; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_diagonal(d: &[C64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_row_major(n: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    /// Outer product `|x><y|`.
    pub fn outer(x: &[C64], y: &[C64]) -> Self {
        assert_eq!(x.len(), y.len());
        Self::from_fn(x.len(), |i, j| x[i] * y[j].conj())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.n).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.n).map(|i| self[(i, i)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(re(s))
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: C64, other: &CMatrix) {
        assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn add_identity(&mut self, alpha: C64) {
        for i in 0..self.n {
            self[(i, i)] += alpha;
        }
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = vec![ZERO; n * n];
        for i in 0..n {
            let out_row = &mut out[i * n..(i + 1) * n];
            for k in 0..n {
                let aik = self.data[i * n + k];
                if aik == ZERO {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += aik * b;
                }
            }
        }
        CMatrix { n, data: out }
    }

    pub fn apply_into(&self, x: &[C64], out: &mut [C64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            *o = row.iter().zip(x).fold(ZERO, |acc, (a, b)| acc + a * b);
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.n];
        self.apply_into(x, &mut out);
        out
    }

    /// `<x|M|x>`
    pub fn expectation(&self, x: &[C64]) -> C64 {
        inner(x, &self.apply(x))
    }

    pub fn commutator(&self, other: &CMatrix) -> CMatrix {
        &self.matmul(other) - &other.matmul(self)
    }

    pub fn anticommutator(&self, other: &CMatrix) -> CMatrix {
        &self.matmul(other) + &other.matmul(self)
    }

    /// `max_ij |M_ij - conj(M_ji)|`
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `(M + M^dagger) / 2`
    pub fn hermitian_part(&self) -> CMatrix {
        Self::from_fn(self.n, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }

    pub fn norm_1(&self) -> f64 {
        let n = self.n;
        (0..n)
            .map(|j| (0..n).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    /// Leading `k x k` block.
    pub fn truncate(&self, k: usize) -> CMatrix {
        assert!(k <= self.n);
        Self::from_fn(k, |i, j| self[(i, j)])
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.n, rhs.n);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&CMatrix> for CMatrix {
    fn sub_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.n, rhs.n);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale_re(-1.0)
    }
}

/// LU factorisation with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<C64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(m: &CMatrix) -> Result<Self> {
        let n = m.n;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].norm();
            for i in k + 1..n {
                let v = lu[i * n + k].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular);
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot_inv = ONE / lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] * pivot_inv;
                lu[i * n + k] = f;
                if f == ZERO {
                    continue;
                }
                let (top, bottom) = lu.split_at_mut(i * n);
                let row_k = &top[k * n + k + 1..k * n + n];
                let row_i = &mut bottom[k + 1..n];
                for (x, y) in row_i.iter_mut().zip(row_k) {
                    *x -= f * y;
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }

    /// Solves `A X = B` column by column, working on rows for locality.
    pub fn solve_matrix(&self, b: &CMatrix) -> CMatrix {
        let n = self.n;
        let mut x = CMatrix::zeros(n);
        for (i, &p) in self.perm.iter().enumerate() {
            x.data[i * n..(i + 1) * n].copy_from_slice(b.row(p));
        }
        for i in 0..n {
            let (done, rest) = x.data.split_at_mut(i * n);
            let row_i = &mut rest[..n];
            for j in 0..i {
                let l = self.lu[i * n + j];
                if l == ZERO {
                    continue;
                }
                for (a, b) in row_i.iter_mut().zip(&done[j * n..(j + 1) * n]) {
                    *a -= l * b;
                }
            }
        }
        for i in (0..n).rev() {
            let (head, tail) = x.data.split_at_mut((i + 1) * n);
            let row_i = &mut head[i * n..];
            for j in i + 1..n {
                let u = self.lu[i * n + j];
                if u == ZERO {
                    continue;
                }
                let row_j = &tail[(j - i - 1) * n..(j - i) * n];
                for (a, b) in row_i.iter_mut().zip(row_j) {
                    *a -= u * b;
                }
            }
            let d = ONE / self.lu[i * n + i];
            for a in row_i.iter_mut() {
                *a *= d;
            }
        }
        x
    }
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Backward-error thresholds of the [m/m] Padé approximants at double
// precision (Higham 2005, Table 2.3).
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152e0;

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant.
///
/// The Padé order is picked from the 1-norm so that the truncation error
/// stays at unit-roundoff level. For skew-hermitian arguments every diagonal
/// Padé approximant is exactly unitary, so the result is unitary to rounding
/// regardless of the chosen order.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    let n = a.dim();
    if n == 0 {
        return Ok(CMatrix::zeros(0));
    }
    let norm = a.norm_1();
    for &(m, theta) in &THETA {
        if norm <= theta {
            let coeffs: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            return pade_low(a, coeffs);
        }
    }
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.scale_re(2f64.powi(-s));
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = r.matmul(&r);
    }
    Ok(r)
}

fn pade_low(a: &CMatrix, b: &[f64]) -> Result<CMatrix> {
    let n = a.dim();
    let a2 = a.matmul(a);
    // Even powers A^0, A^2, A^4, ... up to the order needed.
    let mut evens = vec![CMatrix::identity(n), a2.clone()];
    let m = b.len() - 1;
    while 2 * (evens.len() - 1) < m - 1 {
        let next = evens.last().unwrap().matmul(&a2);
        evens.push(next);
    }
    let mut u_inner = CMatrix::zeros(n);
    let mut v = CMatrix::zeros(n);
    for (k, pow) in evens.iter().enumerate() {
        let odd = 2 * k + 1;
        let even = 2 * k;
        if odd <= m {
            u_inner.add_scaled(re(b[odd]), pow);
        }
        if even <= m {
            v.add_scaled(re(b[even]), pow);
        }
    }
    let u = a.matmul(&u_inner);
    finish_pade(&u, &v)
}

fn pade13(a: &CMatrix) -> Result<CMatrix> {
    let b = &PADE13;
    let n = a.dim();
    let id = CMatrix::identity(n);
    let a2 = a.matmul(a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);

    let mut t = CMatrix::zeros(n);
    t.add_scaled(re(b[13]), &a6);
    t.add_scaled(re(b[11]), &a4);
    t.add_scaled(re(b[9]), &a2);
    let mut u_inner = a6.matmul(&t);
    u_inner.add_scaled(re(b[7]), &a6);
    u_inner.add_scaled(re(b[5]), &a4);
    u_inner.add_scaled(re(b[3]), &a2);
    u_inner.add_scaled(re(b[1]), &id);
    let u = a.matmul(&u_inner);

    let mut t = CMatrix::zeros(n);
    t.add_scaled(re(b[12]), &a6);
    t.add_scaled(re(b[10]), &a4);
    t.add_scaled(re(b[8]), &a2);
    let mut v = a6.matmul(&t);
    v.add_scaled(re(b[6]), &a6);
    v.add_scaled(re(b[4]), &a4);
    v.add_scaled(re(b[2]), &a2);
    v.add_scaled(re(b[0]), &id);
    finish_pade(&u, &v)
}

fn finish_pade(u: &CMatrix, v: &CMatrix) -> Result<CMatrix> {
    let p = v + u;
    let q = v - u;
    Ok(Lu::factor(&q)?.solve_matrix(&p))
}

/// `exp(A) v` without forming `exp(A)`.
///
/// The argument is split into `s` sub-steps with `||A||_1 / s <= 2`, and each
/// sub-step sums the Taylor series until two consecutive terms fall below
/// unit roundoff relative to the partial sum. For skew-hermitian `A` the
/// truncation error is then far below rounding, so the map is unitary to
/// machine precision.
pub fn expm_action(a: &CMatrix, v: &[C64]) -> Vec<C64> {
    let norm = a.norm_1();
    let s = ((norm / 2.0).ceil() as usize).max(1);
    let inv_s = 1.0 / s as f64;
    let mut out = v.to_vec();
    let mut term = vec![ZERO; v.len()];
    let mut next = vec![ZERO; v.len()];
    for _ in 0..s {
        term.copy_from_slice(&out);
        let mut small = 0;
        for k in 1..=80 {
            a.apply_into(&term, &mut next);
            let f = inv_s / k as f64;
            let mut tmax: f64 = 0.0;
            let mut smax: f64 = 0.0;
            for ((t, n), o) in term.iter_mut().zip(&next).zip(out.iter_mut()) {
                *t = n * f;
                *o += *t;
                tmax = tmax.max(t.norm_sqr());
                smax = smax.max(o.norm_sqr());
            }
            if tmax <= 1e-34 * smax {
                small += 1;
                if small == 2 {
                    break;
                }
            } else {
                small = 0;
            }
        }
    }
    out
}

/// Eigen-decomposition of a hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, in the order of `values`.
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn vector(&self, k: usize) -> Vec<C64> {
        self.vectors.column(k)
    }
}

/// Cyclic complex Jacobi eigensolver.
///
/// Ties between eigenvalues keep the order in which the Jacobi sweep left
/// them (a stable sort), which for already-diagonal input is basis-index
/// order.
pub fn eigh(m: &CMatrix) -> Result<HermitianEigen> {
    let n = m.dim();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    if m.hermiticity_defect() > 1e-10 * scale {
        return Err(Error::NonHermitian {
            label: "eigh input",
            defect: m.hermiticity_defect(),
        });
    }
    let mut a = m.hermitian_part();
    let mut v = CMatrix::identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let g = a[(p, q)];
                let r = g.norm();
                if r <= 1e-300 {
                    continue;
                }
                let z = g / r;
                let tau = (a[(q, q)].re - a[(p, p)].re) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * cs;
                let zc = z.conj();
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * cs - zc * akq * sn;
                    a[(k, q)] = z * akp * sn + akq * cs;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * cs - z * aqk * sn;
                    a[(q, k)] = zc * apk * sn + aqk * cs;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * cs - zc * vkq * sn;
                    v[(k, q)] = z * vkp * sn + vkq * cs;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, |i, k| v[(i, order[k])]);
    Ok(HermitianEigen { values, vectors })
}

/// Thomas algorithm for a complex tridiagonal system.
///
/// `lower[i]` couples row `i` to `i-1` (`lower[0]` unused), `upper[i]`
/// couples row `i` to `i+1` (last entry unused).
pub fn solve_tridiagonal(lower: &[C64], diag: &[C64], upper: &[C64], rhs: &[C64]) -> Vec<C64> {
    let n = diag.len();
    let mut cp = vec![ZERO; n];
    let mut x = vec![ZERO; n];
    let mut denom = diag[0];
    cp[0] = if n > 1 { upper[0] / denom } else { ZERO };
    x[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * cp[i - 1];
        if i + 1 < n {
            cp[i] = upper[i] / denom;
        }
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= cp[i] * next;
    }
    x
}

/// Cyclic tridiagonal solve (periodic grids) via Sherman-Morrison.
///
/// `lower[0]` couples row 0 to row `n-1`; `upper[n-1]` couples row `n-1` to
/// row 0.
pub fn solve_cyclic_tridiagonal(
    lower: &[C64],
    diag: &[C64],
    upper: &[C64],
    rhs: &[C64],
) -> Vec<C64> {
    let n = diag.len();
    assert!(n >= 3);
    let alpha = upper[n - 1];
    let beta = lower[0];
    let gamma = -diag[0];
    let mut d = diag.to_vec();
    d[0] -= gamma;
    d[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(lower, &d, upper, rhs);
    let mut u = vec![ZERO; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(lower, &d, upper, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (ONE + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(n: usize, seed: u64) -> CMatrix {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        CMatrix::from_fn(n, |_, _| c(next(), next()))
    }

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        random_matrix(n, seed).hermitian_part()
    }

    fn taylor_expm(a: &CMatrix) -> CMatrix {
        // Oracle: plain Taylor series with repeated squaring, long-double-free.
        let s = 12;
        let scaled = a.scale_re(2f64.powi(-s));
        let n = a.dim();
        let mut term = CMatrix::identity(n);
        let mut sum = CMatrix::identity(n);
        for k in 1..40 {
            term = term.matmul(&scaled).scale_re(1.0 / k as f64);
            sum += &term;
        }
        for _ in 0..s {
            sum = sum.matmul(&sum);
        }
        sum
    }

    #[test]
    fn expm_matches_taylor_oracle_across_norms() {
        for (k, scale) in [1e-3, 0.1, 0.5, 1.5, 4.0, 30.0].iter().enumerate() {
            let a = random_matrix(6, k as u64).scale_re(*scale);
            let e = expm(&a).unwrap();
            let t = taylor_expm(&a);
            let rel = e.max_abs_diff(&t) / t.max_abs().max(1.0);
            assert!(rel < 1e-11, "scale {scale}: {rel}");
        }
    }

    #[test]
    fn expm_of_skew_hermitian_is_unitary() {
        let h = random_hermitian(16, 3).scale_re(3.0);
        let u = expm(&h.scale(c(0.0, -1.0))).unwrap();
        let prod = u.adjoint().matmul(&u);
        assert!(prod.max_abs_diff(&CMatrix::identity(16)) < 1e-13);
    }

    #[test]
    fn expm_diagonal() {
        let d = [c(0.3, 0.0), c(0.0, 2.0), c(-1.0, 0.5)];
        let e = expm(&CMatrix::from_diagonal(&d)).unwrap();
        for (i, z) in d.iter().enumerate() {
            assert!((e[(i, i)] - z.exp()).norm() < 1e-14);
        }
    }

    #[test]
    fn expm_action_matches_dense_exponential() {
        for scale in [0.01, 1.0, 7.0] {
            let h = random_hermitian(12, 21).scale_re(scale);
            let a = h.scale(c(0.0, -1.0));
            let v: Vec<C64> = (0..12).map(|i| c(1.0 / (1.0 + i as f64), 0.3)).collect();
            let dense = expm(&a).unwrap().apply(&v);
            let action = expm_action(&a, &v);
            assert!(max_abs_diff(&dense, &action) < 1e-12, "scale {scale}");
            assert!((norm(&action) - norm(&v)).abs() < 1e-13);
        }
    }

    #[test]
    fn lu_solves() {
        let a = random_matrix(12, 9);
        let x: Vec<C64> = (0..12).map(|i| c(i as f64, 1.0 - i as f64)).collect();
        let b = a.apply(&x);
        let lu = Lu::factor(&a).unwrap();
        assert!(max_abs_diff(&lu.solve(&b), &x) < 1e-10);
        let bm = a.matmul(&random_matrix(12, 4));
        let xm = lu.solve_matrix(&bm);
        assert!(xm.max_abs_diff(&random_matrix(12, 4)) < 1e-10);
    }

    #[test]
    fn singular_matrix_is_reported() {
        assert_eq!(Lu::factor(&CMatrix::zeros(3)).unwrap_err(), Error::Singular);
    }

    #[test]
    fn eigh_reconstructs() {
        let h = random_hermitian(20, 11);
        let e = eigh(&h).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let vd = CMatrix::from_fn(20, |i, k| e.vectors[(i, k)] * e.values[k]);
        let rec = vd.matmul(&e.vectors.adjoint());
        assert!(rec.max_abs_diff(&h) < 1e-12);
        let orth = e.vectors.adjoint().matmul(&e.vectors);
        assert!(orth.max_abs_diff(&CMatrix::identity(20)) < 1e-12);
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        assert!(matches!(
            eigh(&random_matrix(4, 1)),
            Err(Error::NonHermitian { .. })
        ));
    }

    #[test]
    fn eigh_keeps_index_order_on_ties() {
        let e = eigh(&CMatrix::identity(3)).unwrap();
        assert_eq!(e.vectors, CMatrix::identity(3));
    }

    #[test]
    fn tridiagonal_solvers() {
        let n = 9;
        let lower: Vec<C64> = (0..n).map(|i| c(0.3, 0.1 * i as f64)).collect();
        let upper: Vec<C64> = (0..n).map(|i| c(-0.2, 0.05 * i as f64)).collect();
        let diag: Vec<C64> = (0..n).map(|i| c(2.0 + i as f64, 1.0)).collect();
        let x: Vec<C64> = (0..n).map(|i| c(1.0, i as f64)).collect();

        let dense = CMatrix::from_fn(n, |i, j| {
            if i == j {
                diag[i]
            } else if j + 1 == i {
                lower[i]
            } else if i + 1 == j {
                upper[i]
            } else {
                ZERO
            }
        });
        let b = dense.apply(&x);
        assert!(max_abs_diff(&solve_tridiagonal(&lower, &diag, &upper, &b), &x) < 1e-12);

        let mut cyclic = dense.clone();
        cyclic[(0, n - 1)] = lower[0];
        cyclic[(n - 1, 0)] = upper[n - 1];
        let b = cyclic.apply(&x);
        assert!(max_abs_diff(&solve_cyclic_tridiagonal(&lower, &diag, &upper, &b), &x) < 1e-12);
    }
}
