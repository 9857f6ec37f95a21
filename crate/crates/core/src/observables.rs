//! Observables in the co-moving frame, outcome probabilities, ensemble
//! averages and the squeezing coefficient of the confined oscillator.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::boundary::{mean_and_se, BoundaryModel, FrameState};
use crate::error::{Error, Result};
use crate::evolution::{StateVector, Trajectory};
use crate::frame::{Assembler, Drive, Frame, OperatorSpec};
use crate::linalg::{eigh, inner, CMatrix, HermitianEigen, C64, I};

/// Polynomial observable in `(X, P)` with an optional position function.
/// Monomials are symmetrised, so coefficients are real.
pub type ObservableSpec = OperatorSpec;

/// `W A W^dagger` at `frame`.
pub fn transform_observable(asm: &mut Assembler, spec: &ObservableSpec, frame: Frame) -> Result<CMatrix> {
    if !(frame.len > 0.0) {
        return Err(Error::InvalidParameter("frame length must be positive"));
    }
    asm.transform_mut(spec, frame)
}

/// One measurement outcome with its probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub value: f64,
    pub probability: f64,
    /// Number of eigenvectors merged into this outcome.
    pub multiplicity: usize,
}

/// `p_i = |<a_i|phi>|^2 / <phi|phi>`, with eigenvalues closer than
/// `tie_tol * max(1, |a|)` merged into one outcome. Outcomes are reported in
/// ascending order of eigenvalue.
pub fn conditional_probability(state: &[C64], eig: &HermitianEigen, tie_tol: f64) -> Result<Vec<Outcome>> {
    let n = eig.values.len();
    if state.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: state.len(),
        });
    }
    let total = crate::linalg::norm_sqr(state);
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("state has zero norm"));
    }
    let mut out: Vec<Outcome> = Vec::new();
    for (k, &value) in eig.values.iter().enumerate() {
        let amp = inner(&eig.vector(k), state);
        let p = amp.norm_sqr() / total;
        match out.last_mut() {
            Some(last) if (value - last.value).abs() <= tie_tol * last.value.abs().max(1.0) => {
                last.probability += p;
                last.multiplicity += 1;
            }
            _ => out.push(Outcome {
                value,
                probability: p,
                multiplicity: 1,
            }),
        }
    }
    Ok(out)
}

/// Diagonalises `W A W^dagger` and returns the outcome distribution of
/// `state`.
pub fn outcome_distribution(asm: &mut Assembler, spec: &ObservableSpec, frame: Frame, state: &[C64]) -> Result<Vec<Outcome>> {
    let a = transform_observable(asm, spec, frame)?;
    conditional_probability(state, &eigh(&a)?, 1e-9)
}

/// `<phi|W A W^dagger|phi> / <phi|phi>` at the frame a trajectory ended in.
pub fn final_expectation(asm: &mut Assembler, spec: &ObservableSpec, traj: &Trajectory) -> Result<f64> {
    if let Some(e) = &traj.abort {
        return Err(e.clone());
    }
    let a = transform_observable(asm, spec, Frame::from_state(&traj.frame))?;
    Ok(traj.state.expect(&a))
}

/// Expectation of an already transformed observable.
pub fn expectation(state: &StateVector, a: &CMatrix) -> f64 {
    state.expect(a)
}

/// Aborts above this fraction flag an estimate.
pub const ABORT_FLAG_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleEstimate {
    pub label: alloc::string::String,
    pub mean: f64,
    pub std_error: f64,
    /// Trajectories that contributed.
    pub n: usize,
    pub aborted: usize,
    /// Seeds of every attempted trajectory, in reduction order.
    pub seeds: Vec<u64>,
    /// Set when more than one percent of trajectories aborted.
    pub flagged: bool,
}

impl EnsembleEstimate {
    /// Reduces per-seed outcomes. Samples are ordered by seed before the
    /// reduction, so the result does not depend on completion order.
    pub fn from_outcomes(label: &str, outcomes: &[(u64, Option<f64>)]) -> Result<Self> {
        if outcomes.len() < 2 {
            return Err(Error::InvalidParameter("an ensemble needs at least two trajectories"));
        }
        let mut sorted: Vec<(u64, Option<f64>)> = outcomes.to_vec();
        sorted.sort_by_key(|&(seed, _)| seed);
        let values: Vec<f64> = sorted.iter().filter_map(|&(_, v)| v).collect();
        let aborted = sorted.len() - values.len();
        let (mean, std_error) = mean_and_se(&values);
        Ok(Self {
            label: label.into(),
            mean,
            std_error,
            n: values.len(),
            aborted,
            seeds: sorted.iter().map(|&(s, _)| s).collect(),
            flagged: aborted as f64 > ABORT_FLAG_FRACTION * sorted.len() as f64,
        })
    }
}

/// Serial ensemble driver: `run(seed)` evolves one trajectory and returns
/// the observable's value, or an error for an aborted trajectory.
pub fn ensemble_expectation(
    label: &str,
    seeds: &[u64],
    mut run: impl FnMut(u64) -> Result<f64>,
) -> Result<EnsembleEstimate> {
    let outcomes: Vec<(u64, Option<f64>)> = seeds.iter().map(|&s| (s, run(s).ok())).collect();
    EnsembleEstimate::from_outcomes(label, &outcomes)
}

/// Quadratic operator written in the ladder operators `a`, `a^dagger`:
/// `aa a^2 + adad a^dagger^2 + sym {a, a^dagger}/2 + a a + ad a^dagger + one`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LadderForm {
    pub aa: C64,
    pub adad: C64,
    pub sym: C64,
    pub a: C64,
    pub ad: C64,
    pub one: C64,
}

/// Rewrites the quadratic form `(xx, pp, xp, x, p, one)` in `(X', P')`
/// (see [`OperatorSpec::quadratic_form`]) in terms of
/// `a = (sqrt(omega/hbar) P' + i X'/sqrt(hbar omega)) / sqrt 2`.
///
/// This places the momentum in the real part, unlike the textbook
/// convention; with it `[a, a^dagger] = -1`.
pub fn ladder_form(q: [f64; 6], omega: f64, hbar: f64) -> LadderForm {
    let r = 1.0 / 2f64.sqrt();
    // P' = p1 a + p2 a^dagger, X' = x1 a + x2 a^dagger
    let p1 = C64::new((hbar / omega).sqrt() * r, 0.0);
    let p2 = p1;
    let x1 = -I * ((hbar * omega).sqrt() * r);
    let x2 = -x1;
    let [xx, pp, xp, x, p, one] = q;
    LadderForm {
        aa: x1 * x1 * xx + p1 * p1 * pp + x1 * p1 * xp,
        adad: x2 * x2 * xx + p2 * p2 * pp + x2 * p2 * xp,
        sym: x1 * x2 * (2.0 * xx) + p1 * p2 * (2.0 * pp) + (x1 * p2 + x2 * p1) * xp,
        a: x1 * x + p1 * p,
        ad: x2 * x + p2 * p,
        one: C64::new(one, 0.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Squeezing {
    /// `2 (|k_aa| + |k_adad|) / hbar`.
    pub zeta: f64,
    pub omega: f64,
    /// Ladder form of the dilation term of the effective Hamiltonian.
    pub form: LadderForm,
}

/// Squeezing coefficient of the dilation term `-mu2 G` for an oscillator
/// between overdamped mirrors. With `X = (X' - m)/len`, `P = len P'` the
/// dilation is `G = {X', P'}/2 - m P'`; its `a^2` and `a^dagger^2`
/// coefficients define `zeta`.
pub fn squeezing_extract(
    model: &BoundaryModel,
    state: &FrameState,
    hamiltonian: &OperatorSpec,
    hbar: f64,
) -> Result<Squeezing> {
    if !matches!(model, BoundaryModel::Overdamped { .. }) {
        return Err(Error::Unsupported("squeezing needs the overdamped boundary model"));
    }
    let omega = match hamiltonian.quadratic_form() {
        Some([xx, pp, xp, _, _, _]) if xx > 0.0 && pp > 0.0 && xp == 0.0 => 2.0 * (xx * pp).sqrt(),
        _ => return Err(Error::Unsupported("squeezing needs a harmonic Hamiltonian")),
    };
    let g_coeff = -Drive::at(model, state).mu2;
    let q = [0.0, 0.0, g_coeff, 0.0, -g_coeff * state.m, 0.0];
    let form = ladder_form(q, omega, hbar);
    Ok(Squeezing {
        zeta: 2.0 * (form.aa.norm() + form.adad.norm()) / hbar,
        omega,
        form,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{Basis, BasisKind, Term};
    use crate::linalg::{re, ZERO};
    use alloc::vec;

    fn asm(n: usize) -> Assembler {
        let b = Basis::new(BasisKind::DirichletSine, n, 1.0).unwrap();
        Assembler::new(b, OperatorSpec::free(1.0)).unwrap()
    }

    #[test]
    fn position_transform() {
        let mut a = asm(10);
        let f = Frame { m: 0.3, len: 2.0, sign: -1.0 };
        let got = transform_observable(&mut a, &OperatorSpec::position(), f).unwrap();
        let mut want = a.x().scale_re(2.0);
        want.add_identity(re(0.3));
        assert!(got.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn identity_and_kinetic_transform() {
        let mut a = asm(10);
        let f = Frame { m: -0.2, len: 0.7, sign: 1.0 };
        let id = transform_observable(&mut a, &OperatorSpec::identity(), f).unwrap();
        assert!(id.max_abs_diff(&CMatrix::identity(10)) < 1e-13);
        let p2 = ObservableSpec::new("P^2", vec![Term::new(1.0, 0, 2)]);
        let got = transform_observable(&mut a, &p2, f).unwrap();
        let want = transform_observable(&mut a, &p2, Frame::IDENTITY).unwrap().scale_re(1.0 / 0.49);
        assert!(got.max_abs_diff(&want) < 1e-12 * want.max_abs());
    }

    #[test]
    fn probabilities() {
        let a = asm(8);
        let eig = eigh(a.x()).unwrap();
        let p = conditional_probability(&eig.vector(3), &eig, 1e-12).unwrap();
        for (k, o) in p.iter().enumerate() {
            assert!((o.probability - if k == 3 { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
        let mut s = vec![ZERO; 8];
        for k in 0..4 {
            for (si, v) in s.iter_mut().zip(eig.vector(k)) {
                *si += v * 0.5;
            }
        }
        let p = conditional_probability(&s, &eig, 1e-12).unwrap();
        for (k, o) in p.iter().enumerate() {
            let want = if k < 4 { 0.25 } else { 0.0 };
            assert!((o.probability - want).abs() < 1e-12);
        }
        let r: Vec<C64> = (0..8).map(|k| C64::new((k as f64).sin(), (k as f64 * 0.7).cos())).collect();
        let total: f64 = conditional_probability(&r, &eig, 1e-12).unwrap().iter().map(|o| o.probability).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_outcomes_are_merged() {
        let m = CMatrix::from_diagonal(&[re(2.0), re(1.0), re(2.0), re(0.0)]);
        let eig = eigh(&m).unwrap();
        let s = [re(0.5), re(0.5), re(0.5), re(0.5)];
        let p = conditional_probability(&s, &eig, 1e-12).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[2].multiplicity, 2);
        assert_eq!(p[2].value, 2.0);
        assert!((p[2].probability - 0.5).abs() < 1e-14);
    }

    #[test]
    fn ensemble_estimate_is_order_independent() {
        let a = [(3, Some(1.0)), (1, Some(2.0)), (2, None), (7, Some(4.0))];
        let mut b = a;
        b.reverse();
        let ea = EnsembleEstimate::from_outcomes("x", &a).unwrap();
        let eb = EnsembleEstimate::from_outcomes("x", &b).unwrap();
        assert_eq!(ea, eb);
        assert_eq!(ea.seeds, vec![1, 2, 3, 7]);
        assert_eq!((ea.n, ea.aborted), (3, 1));
        assert!(ea.flagged);
        assert!((ea.mean - 7.0 / 3.0).abs() < 1e-15);
        assert!(EnsembleEstimate::from_outcomes("x", &a[..1]).is_err());
        let id = ensemble_expectation("1", &[1, 2, 3], |_| Ok(1.0)).unwrap();
        assert_eq!((id.mean, id.std_error), (1.0, 0.0));
    }

    /// Fock-space oracle: with `[a, a^dagger] = -1`, `a` acts as a raising
    /// operator `b^dagger`. Returns `<n+2| T |n> / sqrt((n+1)(n+2))`, the
    /// `a^2` coefficient of `T = xp {X',P'}/2 + p P'`.
    fn fock_aa(xp: f64, p: f64, omega: f64, hbar: f64, n: usize) -> C64 {
        let dim = 40;
        let b = CMatrix::from_fn(dim, |i, j| if j == i + 1 { re((j as f64).sqrt()) } else { ZERO });
        let a = b.adjoint();
        let ad = b;
        let r = 1.0 / 2f64.sqrt();
        let mut u = &a + &ad;
        u = u.scale_re(r);
        let mut v = &a - &ad;
        v = v.scale(-I * r);
        let pp = u.scale_re((hbar / omega).sqrt());
        let xx = v.scale_re((hbar * omega).sqrt());
        let mut t = xx.anticommutator(&pp).scale_re(0.5 * xp);
        t.add_scaled(re(p), &pp);
        t[(n + 2, n)] / (((n + 1) * (n + 2)) as f64).sqrt()
    }

    #[test]
    fn ladder_form_matches_fock_oracle() {
        for (xp, p, omega, hbar) in [(1.0, 0.0, 1.0, 1.0), (0.7, -0.3, 2.5, 0.4), (-1.2, 0.5, 0.3, 2.0)] {
            let f = ladder_form([0.0, 0.0, xp, 0.0, p, 0.0], omega, hbar);
            for n in 0..5 {
                let want = fock_aa(xp, p, omega, hbar, n);
                assert!((f.aa - want).norm() < 1e-12, "{:?} vs {want:?}", f.aa);
            }
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
    fn squeezing_examples() {
        let h = OperatorSpec::harmonic(1.0, 1.7);
        let at = |l: f64| FrameState::new(-0.5 * l, 0.5 * l, 1.0).unwrap();
        let z = squeezing_extract(&overdamped(1.0, 1.0), &at(1.0), &h, 1.0).unwrap();
        assert!((z.zeta - 2.0).abs() < 1e-12);
        assert!((z.omega - 1.7).abs() < 1e-14);
        let z = squeezing_extract(&overdamped(0.0, 1.0), &at(1.0), &h, 1.0).unwrap();
        assert_eq!(z.zeta, 0.0);
        let z = squeezing_extract(&overdamped(1.0, 2.0), &at(0.5), &h, 1.0).unwrap();
        assert!((z.zeta - 2.0).abs() < 1e-12);
        let dyson = BoundaryModel::Dyson {
            beta: 1.0,
            sigma_a: 1.0,
            sigma_b: 1.0,
        };
        assert!(squeezing_extract(&dyson, &at(1.0), &h, 1.0).is_err());
        assert!(squeezing_extract(&overdamped(1.0, 1.0), &at(1.0), &OperatorSpec::free(1.0), 1.0).is_err());
    }
}
