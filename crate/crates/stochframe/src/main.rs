use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use stochframe::scenario::run_scenario;
use stochframe::{ExperimentConfig, Format, HarnessError, Result, Scenario};

/// Stochastic moving-boundary quantum simulations.
#[derive(Debug, Parser)]
#[command(name = "stochframe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides `run.seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR", default_value = "stochframe-out")]
    out: PathBuf,

    /// Worker threads for ensembles; all cores by default.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Table format; overrides `output.format`.
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, Debug, Subcommand)]
enum Command {
    /// Boundary trajectory and the increments that drove it.
    SimulateBoundary,
    /// One state trajectory in the moving frame.
    Evolve,
    /// Monte-Carlo ensemble of trajectories with per-observable reports.
    Ensemble,
    /// Fluctuating one-dimensional measure in both representations.
    MeasureDemo,
    /// Fluctuating metric on a three-torus.
    ManifoldDemo,
    /// Finite wells of growing height against the hard-wall solution.
    FiniteWellLimit,
    /// The acceptance checks.
    Validate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<Command> for Scenario {
    fn from(c: Command) -> Self {
        match c {
            Command::SimulateBoundary => Scenario::SimulateBoundary,
            Command::Evolve => Scenario::Evolve,
            Command::Ensemble => Scenario::Ensemble,
            Command::MeasureDemo => Scenario::MeasureDemo,
            Command::ManifoldDemo => Scenario::ManifoldDemo,
            Command::FiniteWellLimit => Scenario::FiniteWellLimit,
            Command::Validate => Scenario::Validate,
        }
    }
}

/// The config actually run: the file (or defaults) with command-line
/// overrides applied. Its hash is the one written to every output.
fn effective_config(cli: &Cli, scenario: Scenario) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cfg.scenario {
        if s != scenario {
            return Err(HarnessError::Config(format!(
                "config is for scenario {} but the command is {}",
                s.name(),
                scenario.name()
            )));
        }
    }
    cfg.scenario = Some(scenario);
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(f) = cli.format {
        cfg.output.format = match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        };
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let scenario = Scenario::from(cli.command);
    let result = effective_config(&cli, scenario).and_then(|cfg| run_scenario(&cfg, scenario, &cli.out, cli.threads));
    match result {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            let report = json!({
                "scenario": scenario.name(),
                "status": outcome.status.name(),
                "config_hash": outcome.config_hash,
                "bundle_hash": outcome.bundle_hash,
                "out": cli.out.display().to_string(),
            });
            println!("{report}");
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(e) => {
            let diag = json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() });
            eprintln!("{diag}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
