#![allow(clippy::field_reassign_with_default)]

use proptest::prelude::*;
use stochframe::config::{
    BasisConfig, EvolutionSchemeConfig, HamiltonianConfig, InitialState, ModelConfig, ObservableKind,
};
use stochframe::{ExperimentConfig, Format, HarnessError, Scenario};

#[test]
fn empty_file_is_the_default_config() {
    assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    ExperimentConfig::default().validate().unwrap();
}

#[test]
fn default_serialisation_round_trips() {
    let cfg = ExperimentConfig::default();
    let text = cfg.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
}

#[test]
fn hash_is_stable_and_sensitive() {
    let a = ExperimentConfig::default();
    let mut b = a.clone();
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    assert_eq!(a.hash().unwrap().len(), 64);
    b.run.seed += 1;
    assert_ne!(a.hash().unwrap(), b.hash().unwrap());
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ExperimentConfig::from_toml("[run]\nsteps = 3\n").is_err());
    assert!(ExperimentConfig::from_toml("colour = 1\n").is_err());
}

#[test]
fn partial_tables_keep_other_defaults() {
    let cfg = ExperimentConfig::from_toml("scenario = \"evolve\"\n[run]\ndt = 0.001\n[model]\nkind = \"overdamped\"\nd = 2.0\ngamma = 0.5\n").unwrap();
    assert_eq!(cfg.scenario, Some(Scenario::Evolve));
    assert_eq!(cfg.run.dt, 1e-3);
    assert_eq!(cfg.run.horizon, ExperimentConfig::default().run.horizon);
    assert_eq!(cfg.model, ModelConfig::Overdamped { d: 2.0, gamma: 0.5, repulsion: 0.0 });
}

fn config_error(cfg: &ExperimentConfig) -> bool {
    matches!(cfg.validate(), Err(HarnessError::Config(_)))
}

#[test]
fn range_checks() {
    let mut cfg = ExperimentConfig::default();
    cfg.run.dt = 0.0;
    assert!(config_error(&cfg));

    let mut cfg = ExperimentConfig::default();
    cfg.run.horizon = 0.10005;
    assert!(config_error(&cfg), "horizon must be a multiple of dt");

    let mut cfg = ExperimentConfig::default();
    cfg.run.seed = u64::MAX;
    assert!(config_error(&cfg));

    let mut cfg = ExperimentConfig::default();
    cfg.boundary.b = cfg.boundary.a;
    assert!(config_error(&cfg));

    let mut cfg = ExperimentConfig::default();
    cfg.model = ModelConfig::Overdamped { d: 1.0, gamma: 0.0, repulsion: 0.0 };
    assert!(config_error(&cfg));

    let mut cfg = ExperimentConfig::default();
    cfg.frame.initial = InitialState::Mode { index: 32 };
    let asm = cfg.assembler().unwrap();
    assert!(matches!(cfg.initial_state(&asm), Err(HarnessError::Config(_))));
}

#[test]
fn seeds_are_consecutive() {
    let mut cfg = ExperimentConfig::default();
    cfg.run.seed = 40;
    cfg.run.trajectories = 3;
    assert_eq!(cfg.seeds(), vec![40, 41, 42]);
}

#[test]
fn initial_states_are_normalised() {
    let mut cfg = ExperimentConfig::default();
    cfg.frame.n = 12;
    for init in [
        InitialState::Ground,
        InitialState::Mode { index: 3 },
        InitialState::Gaussian { center: 0.1, width: 0.1, wavenumber: 5.0 },
    ] {
        cfg.frame.initial = init;
        let s = cfg.initial_state(&cfg.assembler().unwrap()).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    }
}

fn model() -> impl Strategy<Value = ModelConfig> {
    prop_oneof![
        (0.1..5.0f64, 0.0..2.0f64, 0.0..2.0f64).prop_map(|(beta, sigma_a, sigma_b)| ModelConfig::Dyson { beta, sigma_a, sigma_b }),
        (0.0..3.0f64, 0.1..3.0f64, 0.0..1.0f64).prop_map(|(d, gamma, repulsion)| ModelConfig::Overdamped { d, gamma, repulsion }),
    ]
}

fn observables() -> impl Strategy<Value = Vec<ObservableKind>> {
    proptest::sample::subsequence(
        vec![
            ObservableKind::Norm,
            ObservableKind::Position,
            ObservableKind::Momentum,
            ObservableKind::Energy,
            ObservableKind::Length,
        ],
        0..=5,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_lossless(
        model in model(),
        seed in 0..=i64::MAX as u64,
        dt in 1e-6..1e-2f64,
        steps in 0u64..1000,
        n in 1usize..200,
        theta in -3.0..3.0f64,
        quasi in any::<bool>(),
        scheme in 0usize..3,
        omega in proptest::option::of(0.1..10.0f64),
        center in -0.4..0.4f64,
        obs in observables(),
        ladder in proptest::collection::vec(1.0..1e6f64, 0..6),
        json_out in any::<bool>(),
        scenario in proptest::option::of(0usize..7),
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.model = model;
        cfg.run.seed = seed;
        cfg.run.dt = dt;
        cfg.run.horizon = steps as f64 * dt;
        cfg.frame.n = n;
        cfg.frame.theta = theta;
        cfg.frame.basis = if quasi { BasisConfig::QuasiPeriodic } else { BasisConfig::Dirichlet };
        cfg.frame.scheme = [EvolutionSchemeConfig::Ito, EvolutionSchemeConfig::ItoMilstein, EvolutionSchemeConfig::Stratonovich][scheme];
        cfg.frame.initial = InitialState::Gaussian { center, width: 0.1, wavenumber: theta };
        cfg.hamiltonian = match omega {
            Some(omega) => HamiltonianConfig::Harmonic { omega },
            None => HamiltonianConfig::Free,
        };
        cfg.ensemble.observables = obs;
        cfg.reference.ladder = ladder;
        cfg.output.format = if json_out { Format::Json } else { Format::Csv };
        cfg.scenario = scenario.map(|i| [
            Scenario::SimulateBoundary, Scenario::Evolve, Scenario::Ensemble, Scenario::MeasureDemo,
            Scenario::ManifoldDemo, Scenario::FiniteWellLimit, Scenario::Validate,
        ][i]);

        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml().unwrap(), text);
        prop_assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }
}
