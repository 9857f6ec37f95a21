//! Moving-frame solutions mapped back to the lab frame against the fixed-grid
//! reference solver.

use stochframe_core::boundary::{mean_and_se, simulate, Affine, BoundaryModel, BoundaryStepper, FrameState};
use stochframe_core::evolution::{evolve, EvolutionConfig, EvolutionScheme, Recording, StateVector};
use stochframe_core::frame::{Assembler, Basis, BasisKind, Frame, OperatorSpec};
use stochframe_core::reference::{
    finite_well_limit_study, reference_evolve, BoundaryPath, ReferenceGrid, ReferenceProblem,
};
use stochframe_core::sde::NoiseSource;
use stochframe_core::C64;

fn superposition(n: usize) -> Vec<C64> {
    let s = 0.5f64.sqrt();
    let mut c = vec![C64::new(0.0, 0.0); n];
    c[0] = C64::new(s, 0.0);
    c[1] = C64::new(0.0, s);
    c
}

fn problem(v0: f64, dt: f64) -> ReferenceProblem {
    ReferenceProblem {
        v0,
        mass: 1.0,
        hbar: 1.0,
        dt,
        inside: None,
    }
}

struct Deterministic {
    basis: Basis,
    path: BoundaryPath,
    grid: ReferenceGrid,
    psi0: Vec<C64>,
    dirichlet: Vec<C64>,
}

fn deterministic_moving_wall() -> Deterministic {
    let dt = 1e-4;
    let model = BoundaryModel::Generic {
        mu_a: Affine::constant(-0.3),
        sigma_a: Affine::constant(0.0),
        mu_b: Affine { c: 0.6, x: 0.0, t: 4.0 },
        sigma_b: Affine::constant(0.0),
    };
    let stepper = BoundaryStepper::new(model).unwrap();
    let init = FrameState::new(-0.5, 0.5, 1.0).unwrap();
    let noise = NoiseSource::new(0, 2, dt).unwrap();
    let run = simulate(&stepper, init, &noise, 1000, 1);
    let path = BoundaryPath::from_run(&run).unwrap();

    let basis = Basis::new(BasisKind::DirichletSine, 64, 1.0).unwrap();
    let asm = Assembler::new(basis.clone(), OperatorSpec::free(1.0)).unwrap();
    let c0 = superposition(64);
    let cfg = EvolutionConfig::new(dt, 0.1, EvolutionScheme::StratonovichUnitary).unwrap();
    let traj = evolve(&asm, &stepper, init, StateVector::new(c0.clone()), &noise, &cfg, Recording::default()).unwrap();
    assert!(traj.abort.is_none());

    let grid = ReferenceGrid::covering(&path, 0.1, 4096).unwrap();
    let psi0 = grid.sample_frame_state(&basis, &c0, Frame::from_state(&init));
    let dirichlet = grid.sample_frame_state(&basis, &traj.state.coeffs, Frame::from_state(&traj.frame));
    Deterministic {
        basis,
        path,
        grid,
        psi0,
        dirichlet,
    }
}

#[test]
fn hard_wall_reference_matches_moving_frame() {
    let d = deterministic_moving_wall();
    let run = reference_evolve(&d.grid, &d.psi0, &d.path, &problem(f64::INFINITY, 1e-4)).unwrap();
    let dist = d.grid.l2_distance(&run.psi, &d.dirichlet);
    assert!(dist <= 1e-3, "{dist:e}");
    assert!(run.max_step_drift <= 1e-10);
    assert_eq!(d.basis.dim(), 64);
}

#[test]
fn finite_well_approaches_dirichlet() {
    let d = deterministic_moving_wall();
    let ladder = finite_well_limit_study(&d.grid, &d.psi0, &d.path, &problem(0.0, 1e-4), &[0.0, 1e2, 1e3, 1e4, 1e5], &d.dirichlet)
        .unwrap();
    assert!(ladder.distances_decrease(), "{:?}", ladder.rungs);
    assert!(ladder.leakage_decreases(), "{:?}", ladder.rungs);
    // No confinement: the packet spreads over the whole domain.
    assert!(ladder.rungs[0].distance > 0.5);
    assert!(ladder.rungs.iter().all(|r| r.max_step_drift <= 1e-10));
}

#[test]
fn overdamped_mirrors_position_ensemble() {
    let dt = 1e-4;
    let model = BoundaryModel::Overdamped {
        d: 1.0,
        gamma: 1.0,
        repulsion: 0.0,
    };
    let stepper = BoundaryStepper::new(model).unwrap();
    let init = FrameState::new(-0.5, 0.5, 1.0).unwrap();
    let basis = Basis::new(BasisKind::DirichletSine, 48, 1.0).unwrap();
    let asm = Assembler::new(basis.clone(), OperatorSpec::free(1.0)).unwrap();
    let c0 = superposition(48);
    let cfg = EvolutionConfig::new(dt, 0.05, EvolutionScheme::StratonovichUnitary).unwrap();
    let (mut frame_x, mut ref_x) = (Vec::new(), Vec::new());
    for seed in 0..16 {
        // Both solvers integrate against the same frozen path.
        let noise = NoiseSource::new(seed, 2, dt).unwrap();
        let path = BoundaryPath::from_run(&simulate(&stepper, init, &noise, 500, 1)).unwrap();
        let traj = evolve(&asm, &stepper, init, StateVector::new(c0.clone()), &noise, &cfg, Recording { every: 500, snapshot_every: 0 })
            .unwrap();
        assert!(traj.abort.is_none());
        frame_x.push(traj.records.last().unwrap().position);

        let grid = ReferenceGrid::covering(&path, 0.05, 2048).unwrap();
        let psi0 = grid.sample_frame_state(&basis, &c0, Frame::from_state(&init));
        let run = reference_evolve(&grid, &psi0, &path, &problem(f64::INFINITY, dt / 8.0)).unwrap();
        let x: f64 = grid.nodes().iter().zip(&run.psi).map(|(x, p)| x * p.norm_sqr()).sum();
        ref_x.push(x * grid.spacing());
    }
    let (mf, sf) = mean_and_se(&frame_x);
    let (mr, sr) = mean_and_se(&ref_x);
    assert!((mf - mr).abs() <= 3.0 * (sf * sf + sr * sr).sqrt(), "{mf} ± {sf} vs {mr} ± {sr}");
}
