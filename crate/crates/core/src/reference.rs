//! Fixed-grid reference solver: a particle in a finite potential well whose
//! walls follow a prescribed (frozen) boundary path.
//!
//! Outside the walls the potential is `v0`; inside it is an optional
//! position function. Letting `v0` grow recovers the Dirichlet problem on
//! the moving interval, which is what the moving-frame solver integrates.
//! Time stepping is Crank–Nicolson (Cayley form), so each step is unitary
//! up to roundoff.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::boundary::BoundaryRun;
use crate::error::{Error, Result};
use crate::evolution::map_back;
use crate::frame::{Basis, Frame, PositionFn};
use crate::linalg::{self, solve_tridiagonal, C64};

/// Minimum number of grid points per de Broglie wavelength.
pub const POINTS_PER_WAVELENGTH: f64 = 8.0;

/// Ratio between the highest energy the grid must resolve and the kinetic
/// energy of the initial state.
pub const ENERGY_HEADROOM: f64 = 4.0;

/// Largest relative norm change tolerated in a single step.
pub const STEP_NORM_TOL: f64 = 1e-10;

/// Wall positions sampled on a time grid, interpolated linearly in between.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPath {
    times: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoundaryPath {
    /// `a` and `b` may come in either order; the path stores the sorted pair.
    pub fn new(times: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || a.len() != times.len() || b.len() != times.len() {
            return Err(Error::InvalidParameter("boundary path needs at least two matching samples"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("boundary path times must increase"));
        }
        let (lower, upper) = a.iter().zip(&b).map(|(&x, &y)| (x.min(y), x.max(y))).unzip();
        Ok(Self { times, lower, upper })
    }

    /// Freeze a simulated trajectory. Every step should be recorded.
    pub fn from_run(run: &BoundaryRun) -> Result<Self> {
        if let Some(e) = &run.abort {
            return Err(e.clone());
        }
        let r = &run.records;
        Self::new(
            r.iter().map(|x| x.t).collect(),
            r.iter().map(|x| x.a).collect(),
            r.iter().map(|x| x.b).collect(),
        )
    }

    /// Sample `f(t) -> (a, b)` at `samples + 1` equispaced times on `[0, horizon]`.
    pub fn from_fn(horizon: f64, samples: usize, f: impl Fn(f64) -> (f64, f64)) -> Result<Self> {
        let n = samples.max(1);
        let times: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
        let (a, b) = times.iter().map(|&t| f(t)).unzip();
        Self::new(times, a, b)
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// `(lower, upper)` wall positions at `t`, clamped to the sampled range.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let n = self.times.len();
        if t <= self.times[0] {
            return (self.lower[0], self.upper[0]);
        }
        if t >= self.times[n - 1] {
            return (self.lower[n - 1], self.upper[n - 1]);
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (
            self.lower[k] + w * (self.lower[k + 1] - self.lower[k]),
            self.upper[k] + w * (self.upper[k + 1] - self.upper[k]),
        )
    }

    /// Smallest lower wall and largest upper wall over the whole path.
    pub fn extremes(&self) -> (f64, f64) {
        (
            self.lower.iter().copied().fold(f64::INFINITY, f64::min),
            self.upper.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

/// Uniform grid of interior nodes on `[lo, hi]` with `psi = 0` at both ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl ReferenceGrid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(hi > lo) || points < 3 {
            return Err(Error::InvalidParameter("reference grid needs hi > lo and at least 3 points"));
        }
        Ok(Self { lo, hi, points })
    }

    /// Domain covering every wall position of `path`, padded by `margin`.
    pub fn covering(path: &BoundaryPath, margin: f64, points: usize) -> Result<Self> {
        let (lo, hi) = path.extremes();
        Self::new(lo - margin, hi + margin, points)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.points + 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.lo + (j + 1) as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.node(j)).collect()
    }

    pub fn sample(&self, f: impl Fn(f64) -> C64) -> Vec<C64> {
        (0..self.points).map(|j| f(self.node(j))).collect()
    }

    /// A moving-frame state mapped back to the lab frame and sampled on the
    /// nodes; zero outside the interval.
    pub fn sample_frame_state(&self, basis: &Basis, coeffs: &[C64], frame: Frame) -> Vec<C64> {
        self.sample(|y| map_back(basis, coeffs, frame, &[y]).map_or(C64::new(0.0, 0.0), |v| v[0]))
    }

    /// Refuse grids with fewer than [`POINTS_PER_WAVELENGTH`] nodes per
    /// wavelength at `max_energy`.
    pub fn check_resolution(&self, max_energy: f64, mass: f64, hbar: f64) -> Result<()> {
        if max_energy <= 0.0 {
            return Ok(());
        }
        let wavelength = 2.0 * PI * hbar / (2.0 * mass * max_energy).sqrt();
        let spacing = self.spacing();
        if spacing * POINTS_PER_WAVELENGTH > wavelength {
            return Err(Error::Resolution { spacing, wavelength });
        }
        Ok(())
    }

    /// Well potential at the nodes: each node's cell `[x - h/2, x + h/2]`
    /// carries `v0` times the fraction of the cell outside `[lower, upper]`,
    /// so the walls may sit between nodes.
    pub fn well_potential(&self, lower: f64, upper: f64, v0: f64, inside: Option<&PositionFn>) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points)
            .map(|j| {
                let x = self.node(j);
                let (c0, c1) = (x - 0.5 * h, x + 0.5 * h);
                let covered = (c1.min(upper) - c0.max(lower)).max(0.0);
                let outside = 1.0 - covered / h;
                let g = match inside {
                    Some(f) if x >= lower && x <= upper => f.eval(x),
                    _ => 0.0,
                };
                v0 * outside + g
            })
            .collect()
    }

    pub fn norm_sqr(&self, psi: &[C64]) -> f64 {
        self.spacing() * linalg::norm_sqr(psi)
    }

    pub fn l2_distance(&self, x: &[C64], y: &[C64]) -> f64 {
        let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum();
        (self.spacing() * s).sqrt()
    }

    /// Probability outside `[lower, upper]`.
    pub fn mass_outside(&self, psi: &[C64], lower: f64, upper: f64) -> f64 {
        let s: f64 = psi
            .iter()
            .enumerate()
            .filter(|(j, _)| {
                let x = self.node(*j);
                x < lower || x > upper
            })
            .map(|(_, p)| p.norm_sqr())
            .sum();
        self.spacing() * s
    }

    /// `<psi| -hbar^2/2m d^2/dx^2 |psi>` with the three-point Laplacian.
    pub fn kinetic_energy(&self, psi: &[C64], mass: f64, hbar: f64) -> f64 {
        let hp = apply_tridiagonal(self, &vec![0.0; self.points], mass, hbar, psi);
        self.spacing() * linalg::inner(psi, &hp).re
    }
}

fn apply_tridiagonal(grid: &ReferenceGrid, v: &[f64], mass: f64, hbar: f64, psi: &[C64]) -> Vec<C64> {
    SymTridiagonal::finite(grid, v, mass, hbar).apply(psi)
}

/// Real symmetric tridiagonal operator; `off[j]` couples nodes `j` and `j + 1`.
#[derive(Clone, Debug)]
struct SymTridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl SymTridiagonal {
    fn finite(grid: &ReferenceGrid, v: &[f64], mass: f64, hbar: f64) -> Self {
        let h = grid.spacing();
        let k = hbar * hbar / (2.0 * mass * h * h);
        Self {
            diag: v.iter().map(|&x| 2.0 * k + x).collect(),
            off: vec![-k; v.len()],
        }
    }

    /// Hard walls at `lower` and `upper`. Nodes outside are decoupled with a
    /// zero row. A node next to a wall at distance `theta * h` takes the
    /// linear ghost value `(theta - 1) / theta * psi`, which keeps the
    /// operator symmetric.
    fn hard_wall(grid: &ReferenceGrid, lower: f64, upper: f64, inside: Option<&PositionFn>, mass: f64, hbar: f64) -> Self {
        let n = grid.points;
        let h = grid.spacing();
        let k = hbar * hbar / (2.0 * mass * h * h);
        let is_in = |j: usize| {
            let x = grid.node(j);
            x > lower && x < upper
        };
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n];
        for j in 0..n {
            if !is_in(j) {
                continue;
            }
            let x = grid.node(j);
            let mut d = 2.0 * k + inside.map_or(0.0, |f| f.eval(x));
            if j > 0 && !is_in(j - 1) {
                d += k * ghost(((x - lower) / h).min(1.0));
            }
            if j + 1 < n && is_in(j + 1) {
                off[j] = -k;
            } else if j + 1 < n {
                d += k * ghost(((upper - x) / h).min(1.0));
            }
            diag[j] = d;
        }
        Self { diag, off }
    }

    fn apply(&self, psi: &[C64]) -> Vec<C64> {
        let n = psi.len();
        (0..n)
            .map(|j| {
                let mut y = psi[j] * self.diag[j];
                if j > 0 {
                    y += psi[j - 1] * self.off[j - 1];
                }
                if j + 1 < n {
                    y += psi[j + 1] * self.off[j];
                }
                y
            })
            .collect()
    }

    /// Solve `(1 + c H) x = rhs`.
    fn solve_shifted(&self, c: C64, rhs: &[C64]) -> Vec<C64> {
        let n = rhs.len();
        let diag: Vec<C64> = self.diag.iter().map(|&d| C64::new(1.0, 0.0) + c * d).collect();
        let upper: Vec<C64> = self.off.iter().map(|&o| c * o).collect();
        let mut lower = vec![C64::new(0.0, 0.0); n];
        lower[1..].copy_from_slice(&upper[..n - 1]);
        solve_tridiagonal(&lower, &diag, &upper, rhs)
    }
}

/// Extra diagonal weight from a ghost node at relative wall distance `theta`.
fn ghost(theta: f64) -> f64 {
    1.0 / theta.max(1e-12) - 1.0
}

/// Physical parameters of a reference run.
#[derive(Clone, Debug)]
pub struct ReferenceProblem {
    /// Well height; `f64::INFINITY` selects hard walls.
    pub v0: f64,
    pub mass: f64,
    pub hbar: f64,
    pub dt: f64,
    /// Potential inside the well, in physical coordinates.
    pub inside: Option<PositionFn>,
}

#[derive(Clone, Debug)]
pub struct ReferenceRun {
    pub psi: Vec<C64>,
    pub t: f64,
    pub steps: u64,
    /// Largest relative norm change seen in one step.
    pub max_step_drift: f64,
}

/// Crank–Nicolson from `path.start()` to `path.end()`. The potential of each
/// step is evaluated at its midpoint time.
pub fn reference_evolve(
    grid: &ReferenceGrid,
    psi0: &[C64],
    path: &BoundaryPath,
    problem: &ReferenceProblem,
) -> Result<ReferenceRun> {
    if psi0.len() != grid.points {
        return Err(Error::Dimension {
            expected: grid.points,
            got: psi0.len(),
        });
    }
    if !(problem.dt > 0.0) || !(problem.mass > 0.0) || !(problem.hbar > 0.0) || problem.v0 < 0.0 {
        return Err(Error::InvalidParameter("reference problem needs dt, mass, hbar > 0 and v0 >= 0"));
    }
    let (lo, hi) = path.extremes();
    if lo <= grid.lo || hi >= grid.hi {
        return Err(Error::Domain { y: if lo <= grid.lo { lo } else { hi }, a: grid.lo, b: grid.hi });
    }
    let n0 = grid.norm_sqr(psi0);
    let kinetic = grid.kinetic_energy(psi0, problem.mass, problem.hbar) / n0;
    grid.check_resolution(ENERGY_HEADROOM * kinetic, problem.mass, problem.hbar)?;

    let span = path.end() - path.start();
    let steps = (span / problem.dt).round();
    if steps < 1.0 || (steps * problem.dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::InvalidParameter("path duration must be a multiple of dt"));
    }
    let steps = steps as u64;
    let dt = problem.dt;
    let c = C64::new(0.0, 0.5 * dt / problem.hbar);
    let mut psi = psi0.to_vec();
    let mut norm = n0;
    let mut max_step_drift: f64 = 0.0;
    for s in 0..steps {
        let t_mid = path.start() + (s as f64 + 0.5) * dt;
        let (lower, upper) = path.at(t_mid);
        let ham = if problem.v0.is_infinite() {
            SymTridiagonal::hard_wall(grid, lower, upper, problem.inside.as_ref(), problem.mass, problem.hbar)
        } else {
            let v = grid.well_potential(lower, upper, problem.v0, problem.inside.as_ref());
            SymTridiagonal::finite(grid, &v, problem.mass, problem.hbar)
        };
        let hpsi = ham.apply(&psi);
        let rhs: Vec<C64> = psi.iter().zip(&hpsi).map(|(p, hp)| p - c * hp).collect();
        psi = ham.solve_shifted(c, &rhs);
        let next = grid.norm_sqr(&psi);
        let drift = (next - norm).abs() / norm;
        max_step_drift = max_step_drift.max(drift);
        if !(drift <= STEP_NORM_TOL) {
            return Err(Error::Instability {
                scheme: "crank-nicolson",
                drift,
                limit: STEP_NORM_TOL,
            });
        }
        norm = next;
    }
    Ok(ReferenceRun {
        psi,
        t: path.start() + steps as f64 * dt,
        steps,
        max_step_drift,
    })
}

/// Normalized ground state of the discretized Hamiltonian with potential
/// `v`, by shifted inverse iteration.
pub fn ground_state(grid: &ReferenceGrid, v: &[f64], mass: f64, hbar: f64) -> Result<(f64, Vec<C64>)> {
    let n = grid.points;
    if v.len() != n {
        return Err(Error::Dimension { expected: n, got: v.len() });
    }
    let h = grid.spacing();
    let k = hbar * hbar / (2.0 * mass * h * h);
    let shift = v.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let off = vec![C64::new(-k, 0.0); n];
    let diag: Vec<C64> = v.iter().map(|&x| C64::new(2.0 * k + x - shift, 0.0)).collect();
    let mut psi: Vec<C64> = (0..n).map(|j| C64::new((PI * (j + 1) as f64 / (n + 1) as f64).sin(), 0.0)).collect();
    let mut energy = f64::NAN;
    for _ in 0..500 {
        let mut next = solve_tridiagonal(&off, &diag, &off, &psi);
        let s = 1.0 / grid.norm_sqr(&next).sqrt();
        next.iter_mut().for_each(|x| *x *= s);
        let e = grid.spacing() * linalg::inner(&next, &apply_tridiagonal(grid, v, mass, hbar, &next)).re;
        let settled = (e - energy).abs() <= 1e-14 * e.abs().max(1.0);
        psi = next;
        energy = e;
        if settled {
            return Ok((energy, psi));
        }
    }
    Err(Error::Instability {
        scheme: "inverse-iteration",
        drift: f64::NAN,
        limit: 1e-14,
    })
}

/// One rung of the finite-well ladder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WellRung {
    pub v0: f64,
    /// L2 distance to the Dirichlet solution at the final time.
    pub distance: f64,
    /// Probability outside the final well.
    pub outside_mass: f64,
    pub max_step_drift: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WellLadder {
    pub rungs: Vec<WellRung>,
}

impl WellLadder {
    pub fn distances_decrease(&self) -> bool {
        self.rungs.windows(2).all(|w| w[1].distance < w[0].distance)
    }

    pub fn leakage_decreases(&self) -> bool {
        self.rungs.windows(2).all(|w| w[1].outside_mass < w[0].outside_mass)
    }
}

/// Run the reference solver for each well height in `ladder` and compare
/// with `dirichlet`, the moving-frame solution at the final time sampled on
/// the grid nodes (zero outside the well).
pub fn finite_well_limit_study(
    grid: &ReferenceGrid,
    psi0: &[C64],
    path: &BoundaryPath,
    problem: &ReferenceProblem,
    ladder: &[f64],
    dirichlet: &[C64],
) -> Result<WellLadder> {
    if ladder.len() < 4 {
        return Err(Error::InvalidParameter("finite-well ladder needs at least four rungs"));
    }
    if ladder.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("finite-well ladder must increase"));
    }
    if dirichlet.len() != grid.points {
        return Err(Error::Dimension {
            expected: grid.points,
            got: dirichlet.len(),
        });
    }
    let (lower, upper) = path.at(path.end());
    let rungs = ladder
        .iter()
        .map(|&v0| {
            let p = ReferenceProblem { v0, ..problem.clone() };
            let run = reference_evolve(grid, psi0, path, &p)?;
            Ok(WellRung {
                v0,
                distance: grid.l2_distance(&run.psi, dirichlet),
                outside_mass: grid.mass_outside(&run.psi, lower, upper),
                max_step_drift: run.max_step_drift,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WellLadder { rungs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::re;

    fn free_packet(x: f64, t: f64, x0: f64, s: f64, k: f64) -> C64 {
        // Free evolution of a Gaussian with a complex centre shift.
        let tau = C64::new(1.0, t / (2.0 * s * s));
        let u = C64::new(x - x0, -2.0 * k * s * s);
        let norm = (2.0 * PI * s * s).powf(-0.25);
        (-(u * u) / (4.0 * s * s * tau) - k * k * s * s).exp() / tau.sqrt() * norm
    }

    fn static_path(lower: f64, upper: f64, horizon: f64) -> BoundaryPath {
        BoundaryPath::from_fn(horizon, 1, |_| (lower, upper)).unwrap()
    }

    #[test]
    fn path_interpolates_and_sorts() {
        let p = BoundaryPath::new(vec![0.0, 1.0, 2.0], vec![0.5, 1.0, 0.0], vec![-0.5, -1.0, 3.0]).unwrap();
        assert_eq!(p.at(0.5), (-0.75, 0.75));
        assert_eq!(p.at(1.5), (-0.5, 2.0));
        assert_eq!(p.at(9.0), (0.0, 3.0));
        assert_eq!(p.extremes(), (-1.0, 3.0));
        assert!(BoundaryPath::new(vec![0.0, 0.0], vec![0.0; 2], vec![1.0; 2]).is_err());
    }

    #[test]
    fn fractional_cell_potential() {
        let g = ReferenceGrid::new(0.0, 1.0, 9).unwrap();
        // Nodes at 0.1, ..., 0.9 with cells of width 0.1.
        let v = g.well_potential(0.32, 0.7, 10.0, None);
        assert!((v[0] - 10.0).abs() < 1e-12);
        assert!((v[2] - 7.0).abs() < 1e-12);
        assert!(v[3].abs() < 1e-12);
        assert!((v[6] - 5.0).abs() < 1e-12);
        assert!((v[8] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn free_packet_matches_closed_form() {
        let g = ReferenceGrid::new(-2.0, 2.0, 8192).unwrap();
        let (x0, s, k, horizon) = (-0.2, 0.2, 1.0, 0.05);
        let psi0 = g.sample(|x| free_packet(x, 0.0, x0, s, k));
        let problem = ReferenceProblem {
            v0: 0.0,
            mass: 1.0,
            hbar: 1.0,
            dt: 5e-5,
            inside: None,
        };
        let run = reference_evolve(&g, &psi0, &static_path(-1.0, 1.0, horizon), &problem).unwrap();
        let exact = g.sample(|x| free_packet(x, horizon, x0, s, k));
        let d = g.l2_distance(&run.psi, &exact);
        assert!(d < 1e-6, "{d:e}");
        assert!(run.max_step_drift < STEP_NORM_TOL);
    }

    #[test]
    fn ground_state_is_stationary() {
        let g = ReferenceGrid::new(-1.0, 1.0, 1024).unwrap();
        let v = g.well_potential(-0.5, 0.5, 1e5, None);
        let (e, psi0) = ground_state(&g, &v, 1.0, 1.0).unwrap();
        // Close to the hard-wall value pi^2 / 2.
        assert!((e - PI * PI / 2.0).abs() < 0.05 * e, "{e}");
        let problem = ReferenceProblem {
            v0: 1e5,
            mass: 1.0,
            hbar: 1.0,
            dt: 1e-3,
            inside: None,
        };
        let run = reference_evolve(&g, &psi0, &static_path(-0.5, 0.5, 0.2), &problem).unwrap();
        let overlap = g.spacing() * linalg::inner(&psi0, &run.psi);
        assert!((overlap.norm() - 1.0).abs() < 1e-10);
        assert!((g.norm_sqr(&run.psi) - 1.0).abs() < 1e-10);
        // Cayley phase of the discrete eigenvalue.
        let phase = -2.0 * (0.5 * e * problem.dt).atan() * run.steps as f64;
        assert!((overlap.arg() - phase).rem_euclid(2.0 * PI).min((phase - overlap.arg()).rem_euclid(2.0 * PI)) < 1e-8);
    }

    #[test]
    fn coarse_grid_is_refused() {
        let g = ReferenceGrid::new(-1.0, 1.0, 16).unwrap();
        let psi0 = g.sample(|x| C64::new(0.0, 40.0 * x).exp() * (-x * x * 20.0).exp());
        let problem = ReferenceProblem {
            v0: 0.0,
            mass: 1.0,
            hbar: 1.0,
            dt: 1e-3,
            inside: None,
        };
        let r = reference_evolve(&g, &psi0, &static_path(-0.5, 0.5, 0.01), &problem);
        assert!(matches!(r, Err(Error::Resolution { .. })));
    }

    #[test]
    fn ladder_validation() {
        let g = ReferenceGrid::new(-1.0, 1.0, 64).unwrap();
        let psi0 = vec![re(0.0); 64];
        let problem = ReferenceProblem {
            v0: 0.0,
            mass: 1.0,
            hbar: 1.0,
            dt: 1e-3,
            inside: None,
        };
        let path = static_path(-0.5, 0.5, 0.01);
        assert!(finite_well_limit_study(&g, &psi0, &path, &problem, &[1.0, 2.0, 3.0], &psi0).is_err());
        assert!(finite_well_limit_study(&g, &psi0, &path, &problem, &[1.0, 3.0, 2.0, 4.0], &psi0).is_err());
    }
}
