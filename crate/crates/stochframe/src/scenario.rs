//! One function per scenario. Each writes its bundle under `out` and
//! reports whether the run passed, failed a check, or aborted.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};
use stochframe_core::boundary::{simulate, BoundaryModel};
use stochframe_core::evolution::{evolve, Recording};
use stochframe_core::frame::{BasisKind, Drive, Frame, PositionFn};
use stochframe_core::measure::{run_manifold_demo, run_measure_demo, Representation};
use stochframe_core::observables::{squeezing_extract, EnsembleEstimate};
use stochframe_core::reference::{finite_well_limit_study, ReferenceProblem};
use stochframe_core::sde::NoiseSource;

use crate::bundle::Bundle;
use crate::config::{ExperimentConfig, HamiltonianConfig, ObservableKind, Scenario};
use crate::crossval::frozen_comparison;
use crate::ensemble::{moments, par_map_seeds};
use crate::error::{HarnessError, Result};
use crate::formats::{
    dump_operators, encode_snapshots, increment_rows, measure_field_rows, metric_field_rows, BoundaryRow,
    ManifoldRow, MeasureRow, RungRow, StateRow,
};
use crate::validate::{run_criterion, CriterionReport, CRITERIA};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    ValidationFailed,
    Aborted,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::ValidationFailed => 2,
            Status::Aborted => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::ValidationFailed => "validation-failed",
            Status::Aborted => "aborted",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub scenario: Scenario,
    pub status: Status,
    pub config_hash: String,
    pub bundle_hash: String,
    pub summary: Value,
    /// Human-readable lines, one per check where a scenario has them.
    pub lines: Vec<String>,
}

struct Finished {
    status: Status,
    seeds: Vec<u64>,
    summary: Value,
    lines: Vec<String>,
}

impl Finished {
    fn new(status: Status, seeds: Vec<u64>, summary: Value) -> Self {
        Self {
            status,
            seeds,
            summary,
            lines: Vec::new(),
        }
    }
}

fn abort_status(abort: &Option<stochframe_core::Error>) -> Status {
    if abort.is_some() {
        Status::Aborted
    } else {
        Status::Pass
    }
}

fn abort_text(abort: &Option<stochframe_core::Error>) -> Option<String> {
    abort.as_ref().map(|e| e.to_string())
}

/// Validates `cfg`, runs `scenario` and writes its bundle to `out`.
pub fn run_scenario(cfg: &ExperimentConfig, scenario: Scenario, out: &Path, threads: Option<usize>) -> Result<RunOutcome> {
    cfg.validate()?;
    if threads == Some(0) {
        return Err(HarnessError::Config("--threads must be positive".into()));
    }
    let config_hash = cfg.hash()?;
    let mut bundle = Bundle::create(out, &config_hash, cfg.output.format)?;
    bundle.write_bytes("config.toml", cfg.to_toml()?.as_bytes())?;
    let done = match scenario {
        Scenario::SimulateBoundary => simulate_boundary(cfg, &mut bundle)?,
        Scenario::Evolve => evolve_state(cfg, &mut bundle)?,
        Scenario::Ensemble => ensemble(cfg, &mut bundle, threads)?,
        Scenario::MeasureDemo => measure_demo(cfg, &mut bundle)?,
        Scenario::ManifoldDemo => manifold_demo(cfg, &mut bundle)?,
        Scenario::FiniteWellLimit => finite_well(cfg, &mut bundle)?,
        Scenario::Validate => validate(cfg, &mut bundle, threads)?,
    };
    let bundle_hash = bundle.finish(scenario.name(), &done.seeds, done.status.name())?;
    Ok(RunOutcome {
        scenario,
        status: done.status,
        config_hash,
        bundle_hash,
        summary: done.summary,
        lines: done.lines,
    })
}

fn simulate_boundary(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Finished> {
    let stepper = cfg.stepper()?;
    let init = cfg.initial_frame()?;
    let noise = cfg.noise(cfg.run.seed)?;
    let steps = cfg.steps()?;
    let run = simulate(&stepper, init, &noise, steps, cfg.run.record_every);
    let rows: Vec<BoundaryRow> = run.records.iter().map(BoundaryRow::from).collect();
    bundle.write_table("boundary", &rows)?;
    if cfg.output.increments {
        bundle.write_table("increments", &increment_rows(&noise, steps))?;
    }
    let last = run.final_state();
    let summary = json!({
        "config_hash": bundle.config_hash(),
        "seed": cfg.run.seed,
        "steps": steps,
        "final": last.map(|r| json!({ "t": r.t, "a": r.a, "b": r.b, "m": r.m, "l": r.l, "sign": r.sign })),
        "min_length": run.min_length(),
        "sign_flips": run.sign_flips(),
        "abort": abort_text(&run.abort),
    });
    bundle.write_json("summary.json", &summary)?;
    Ok(Finished::new(abort_status(&run.abort), vec![cfg.run.seed], summary))
}

fn evolve_state(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Finished> {
    let asm = cfg.assembler()?;
    let stepper = cfg.stepper()?;
    let init = cfg.initial_frame()?;
    let state = cfg.initial_state(&asm)?;
    if cfg.output.operator_dump {
        let ops = asm.effective(Frame::from_state(&init), Drive::at(&stepper.model, &init))?;
        let kind = asm.basis().kind();
        dump_operators(bundle, &ops, kind.name(), kind.theta(), cfg.units.mass, cfg.output.operator_payload)?;
    }
    let noise = cfg.noise(cfg.run.seed)?;
    let traj = evolve(&asm, &stepper, init, state, &noise, &cfg.evolution()?, cfg.recording())?;
    let rows: Vec<StateRow> = traj.records.iter().map(StateRow::from).collect();
    bundle.write_table("states", &rows)?;
    if !traj.snapshots.is_empty() {
        bundle.write_bytes("snapshots.bin", &encode_snapshots(bundle.config_hash(), asm.basis().dim(), &traj.snapshots)?)?;
    }
    let last = traj.records.last();
    let summary = json!({
        "config_hash": bundle.config_hash(),
        "seed": cfg.run.seed,
        "scheme": cfg.evolution()?.scheme.name(),
        "basis": asm.basis().kind().name(),
        "n": asm.basis().dim(),
        "records": traj.records.len(),
        "snapshots": traj.snapshots.len(),
        "final": last.map(StateRow::from),
        "abort": abort_text(&traj.abort),
    });
    bundle.write_json("summary.json", &summary)?;
    Ok(Finished::new(abort_status(&traj.abort), vec![cfg.run.seed], summary))
}

/// Final values of one ensemble member; `None` fields when it aborted.
#[derive(Clone, Copy, Debug, Serialize)]
struct TrajectoryRow {
    seed: u64,
    aborted: bool,
    norm: Option<f64>,
    position: Option<f64>,
    momentum: Option<f64>,
    energy: Option<f64>,
    length: Option<f64>,
}

impl TrajectoryRow {
    fn get(&self, kind: ObservableKind) -> Option<f64> {
        match kind {
            ObservableKind::Norm => self.norm,
            ObservableKind::Position => self.position,
            ObservableKind::Momentum => self.momentum,
            ObservableKind::Energy => self.energy,
            ObservableKind::Length => self.length,
        }
    }
}

fn ensemble(cfg: &ExperimentConfig, bundle: &mut Bundle, threads: Option<usize>) -> Result<Finished> {
    let asm = cfg.assembler()?;
    let stepper = cfg.stepper()?;
    let init = cfg.initial_frame()?;
    let state = cfg.initial_state(&asm)?;
    let evo = cfg.evolution()?;
    let steps = cfg.steps()?;
    let rec = Recording {
        every: steps.max(1),
        snapshot_every: 0,
    };
    let seeds = cfg.seeds();
    if seeds.len() < 2 {
        return Err(HarnessError::Config("run.trajectories must be at least 2 for an ensemble".into()));
    }
    let rows = par_map_seeds(&seeds, threads, |seed| -> Result<TrajectoryRow> {
        let noise = NoiseSource::new(seed, 2, cfg.run.dt)?;
        let traj = evolve(&asm, &stepper, init, state.clone(), &noise, &evo, rec)?;
        let last = traj.records.last().filter(|_| traj.abort.is_none());
        Ok(TrajectoryRow {
            seed,
            aborted: last.is_none(),
            norm: last.map(|r| r.norm * r.norm),
            position: last.map(|r| r.position),
            momentum: last.map(|r| r.momentum),
            energy: last.map(|r| r.energy),
            length: last.map(|r| r.l),
        })
    })?;
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    bundle.write_table("trajectories", &rows)?;

    let mut observables = serde_json::Map::new();
    let mut contributing = 0;
    for &kind in &cfg.ensemble.observables {
        let outcomes: Vec<(u64, Option<f64>)> = rows.iter().map(|r| (r.seed, r.get(kind))).collect();
        let est = EnsembleEstimate::from_outcomes(kind.label(), &outcomes)?;
        let values: Vec<f64> = outcomes.iter().filter_map(|o| o.1).collect();
        let (_, variance, _) = moments(&values);
        contributing = est.n;
        bundle.write_json(
            &format!("report_{}.json", kind.label()),
            &json!({
                "label": est.label,
                "estimate": est.mean,
                "std_error": est.std_error,
                "n": est.n,
                "aborted": est.aborted,
                "flagged": est.flagged,
                "seeds": est.seeds,
                "config_hash": bundle.config_hash(),
            }),
        )?;
        observables.insert(
            kind.label().to_string(),
            json!({ "mean": est.mean, "variance": variance, "std_error": est.std_error, "n": est.n, "aborted": est.aborted, "flagged": est.flagged }),
        );
    }

    let mut status = if contributing == 0 && !cfg.ensemble.observables.is_empty() {
        Status::Aborted
    } else {
        Status::Pass
    };
    let squeezing = match (stepper.model.clone(), cfg.hamiltonian) {
        (BoundaryModel::Overdamped { d, gamma, .. }, HamiltonianConfig::Harmonic { .. }) => {
            let z = squeezing_extract(&stepper.model, &init, &cfg.hamiltonian_spec(), cfg.units.hbar)?;
            let l = init.length();
            let expected = 2.0 * d * d / (gamma * gamma * l * l);
            let error = (z.zeta - expected).abs() / expected.max(1.0);
            if error > 1e-10 {
                status = Status::ValidationFailed;
            }
            json!({ "zeta": z.zeta, "expected": expected, "relative_error": error })
        }
        _ => Value::Null,
    };
    let summary = json!({
        "config_hash": bundle.config_hash(),
        "trajectories": seeds.len(),
        "aborted": rows.iter().filter(|r| r.aborted).count(),
        "seeds": seeds,
        "observables": observables,
        "squeezing": squeezing,
    });
    bundle.write_json("ensemble.json", &summary)?;
    Ok(Finished::new(status, seeds, summary))
}

fn measure_demo(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Finished> {
    let demo = cfg.measure_demo()?;
    let noise = NoiseSource::new(cfg.run.seed, 1, demo.dt)?;
    let run = run_measure_demo(&demo, &noise)?;
    let rows: Vec<MeasureRow> = run.records.iter().map(MeasureRow::from).collect();
    bundle.write_table("measure", &rows)?;
    bundle.write_table("field", &measure_field_rows(&run.field))?;
    let summary = json!({
        "config_hash": bundle.config_hash(),
        "seed": cfg.run.seed,
        "points": demo.points,
        "steps": demo.steps,
        "norm_drift_flat": run.norm_drift(Representation::Flat),
        "norm_drift_hk": run.norm_drift(Representation::Hk),
        "duality_gap": run.duality_gap(),
        "abort": abort_text(&run.abort),
    });
    bundle.write_json("summary.json", &summary)?;
    Ok(Finished::new(abort_status(&run.abort), vec![cfg.run.seed], summary))
}

fn manifold_demo(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Finished> {
    let demo = cfg.manifold_demo()?;
    let noise = NoiseSource::new(cfg.run.seed, 6, demo.dt)?;
    let run = run_manifold_demo(&demo, &noise)?;
    let rows: Vec<ManifoldRow> = run.records.iter().map(ManifoldRow::from).collect();
    bundle.write_table("manifold", &rows)?;
    bundle.write_table("field", &metric_field_rows(&run.field))?;
    let summary = json!({
        "config_hash": bundle.config_hash(),
        "seed": cfg.run.seed,
        "shape": demo.shape,
        "steps": demo.steps,
        "representation": demo.representation.name(),
        "norm_drift": run.norm_drift(),
        "abort": abort_text(&run.abort),
    });
    bundle.write_json("summary.json", &summary)?;
    Ok(Finished::new(abort_status(&run.abort), vec![cfg.run.seed], summary))
}

fn finite_well(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Finished> {
    if cfg.basis_kind() != BasisKind::DirichletSine {
        return Err(HarnessError::Config("finite-well-limit needs frame.basis = \"dirichlet\"".into()));
    }
    let r = &cfg.reference;
    if r.substeps == 0 {
        return Err(HarnessError::Config("reference.substeps must be positive".into()));
    }
    let asm = cfg.assembler()?;
    let cmp = frozen_comparison(
        &asm,
        &cfg.stepper()?,
        cfg.initial_frame()?,
        cfg.initial_state(&asm)?,
        &cfg.noise(cfg.run.seed)?,
        &cfg.evolution()?,
        r.points,
        r.margin,
    )?;
    let inside = match cfg.hamiltonian {
        HamiltonianConfig::Free => None,
        HamiltonianConfig::Harmonic { omega } => {
            let k = 0.5 * cfg.units.mass * omega * omega;
            Some(PositionFn::Custom(Arc::new(move |y| k * y * y)))
        }
    };
    let problem = ReferenceProblem {
        v0: f64::INFINITY,
        mass: cfg.units.mass,
        hbar: cfg.units.hbar,
        dt: cfg.run.dt / r.substeps as f64,
        inside,
    };
    let hard = cmp.reference(f64::INFINITY, problem.mass, problem.hbar, problem.dt, problem.inside.clone())?;
    let hard_distance = cmp.distance(&hard);
    let ladder = finite_well_limit_study(&cmp.grid, &cmp.psi0, &cmp.path, &problem, &r.ladder, &cmp.dirichlet)
        .map_err(|e| match e {
            stochframe_core::Error::InvalidParameter(m) => HarnessError::Config(m.into()),
            e => e.into(),
        })?;
    let rows: Vec<RungRow> = ladder.rungs.iter().map(RungRow::from).collect();
    bundle.write_table("ladder", &rows)?;
    let monotone = ladder.distances_decrease() && ladder.leakage_decreases();
    let summary = json!({
        "config_hash": bundle.config_hash(),
        "seed": cfg.run.seed,
        "points": r.points,
        "hard_wall_distance": hard_distance,
        "distances_decrease": ladder.distances_decrease(),
        "leakage_decreases": ladder.leakage_decreases(),
        "rungs": rows,
    });
    bundle.write_json("summary.json", &summary)?;
    let status = if monotone { Status::Pass } else { Status::ValidationFailed };
    Ok(Finished::new(status, vec![cfg.run.seed], summary))
}

fn validate(cfg: &ExperimentConfig, bundle: &mut Bundle, threads: Option<usize>) -> Result<Finished> {
    let ids: Vec<u32> = if cfg.validate.criteria.is_empty() {
        CRITERIA.to_vec()
    } else {
        cfg.validate.criteria.clone()
    };
    let reports = ids
        .iter()
        .map(|&id| run_criterion(id, threads))
        .collect::<Result<Vec<CriterionReport>>>()?;
    let passed = reports.iter().all(|r| r.passed);
    let summary = json!({
        "config_hash": bundle.config_hash(),
        "passed": passed,
        "criteria": reports,
    });
    bundle.write_json("validation.json", &summary)?;
    let status = if passed { Status::Pass } else { Status::ValidationFailed };
    let mut done = Finished::new(status, Vec::new(), summary);
    done.lines = reports.iter().map(CriterionReport::line).collect();
    Ok(done)
}
