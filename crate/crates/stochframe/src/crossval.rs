//! Moving-frame runs paired with the fixed-grid reference solver on one
//! frozen boundary path.

use stochframe_core::boundary::{simulate, BoundaryStepper, FrameState};
use stochframe_core::evolution::{evolve, EvolutionConfig, Recording, StateVector};
use stochframe_core::frame::{Assembler, BasisKind, Frame, PositionFn};
use stochframe_core::reference::{reference_evolve, BoundaryPath, ReferenceGrid, ReferenceProblem, ReferenceRun};
use stochframe_core::sde::NoiseSource;
use stochframe_core::{Error, C64};

use crate::error::Result;

/// A moving-frame solution and everything needed to rerun it on a grid.
#[derive(Clone, Debug)]
pub struct FrozenComparison {
    pub path: BoundaryPath,
    pub grid: ReferenceGrid,
    /// Initial state on the grid nodes.
    pub psi0: Vec<C64>,
    /// Final moving-frame state on the grid nodes.
    pub dirichlet: Vec<C64>,
}

/// Samples the boundary path driven by `noise`, evolves `state` along it in
/// the moving frame, and maps both ends onto a grid of `points` nodes that
/// covers the path with `margin` to spare.
#[allow(clippy::too_many_arguments)]
pub fn frozen_comparison(
    asm: &Assembler,
    stepper: &BoundaryStepper,
    init: FrameState,
    state: StateVector,
    noise: &NoiseSource,
    cfg: &EvolutionConfig,
    points: usize,
    margin: f64,
) -> Result<FrozenComparison> {
    if asm.basis().kind() != BasisKind::DirichletSine {
        return Err(Error::Unsupported("the reference comparison needs the Dirichlet basis").into());
    }
    let steps = cfg.steps()?;
    let run = simulate(stepper, init, noise, steps, 1);
    if let Some(e) = run.abort {
        return Err(e.into());
    }
    let path = BoundaryPath::from_run(&run)?;
    let rec = Recording {
        every: steps.max(1),
        snapshot_every: 0,
    };
    let c0 = state.coeffs.clone();
    let traj = evolve(asm, stepper, init, state, noise, cfg, rec)?;
    if let Some(e) = traj.abort {
        return Err(e.into());
    }
    let grid = ReferenceGrid::covering(&path, margin, points)?;
    let basis = asm.basis();
    Ok(FrozenComparison {
        psi0: grid.sample_frame_state(basis, &c0, Frame::from_state(&init)),
        dirichlet: grid.sample_frame_state(basis, &traj.state.coeffs, Frame::from_state(&traj.frame)),
        path,
        grid,
    })
}

impl FrozenComparison {
    /// Reference run with walls of height `v0` (`INFINITY` for hard walls).
    pub fn reference(&self, v0: f64, mass: f64, hbar: f64, dt: f64, inside: Option<PositionFn>) -> Result<ReferenceRun> {
        let problem = ReferenceProblem {
            v0,
            mass,
            hbar,
            dt,
            inside,
        };
        Ok(reference_evolve(&self.grid, &self.psi0, &self.path, &problem)?)
    }

    pub fn distance(&self, run: &ReferenceRun) -> f64 {
        self.grid.l2_distance(&run.psi, &self.dirichlet)
    }
}
