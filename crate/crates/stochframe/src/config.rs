//! Experiment configuration: a TOML document with one table per concern.
//!
//! Every table has defaults, so an empty file is a valid Dyson run. The
//! parsed configuration serialises back to the same values, and the
//! SHA-256 of that canonical serialisation identifies a run in every
//! output it produces.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stochframe_core::boundary::{Affine, BoundaryModel, BoundaryStepper, FrameState, LangevinForm};
use stochframe_core::evolution::{EvolutionConfig, EvolutionScheme, Recording, StateVector};
use stochframe_core::frame::{Assembler, Basis, BasisKind, Frame, OperatorSpec};
use stochframe_core::linalg::{eigh, C64};
use stochframe_core::measure::{self, Bounds, ManifoldDemo, MeasureDemo, MetricModel, NoiseCoefficient, Representation};
use stochframe_core::sde::{NoiseSource, StepScheme};
use stochframe_core::Units;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SimulateBoundary,
    Evolve,
    Ensemble,
    MeasureDemo,
    ManifoldDemo,
    FiniteWellLimit,
    Validate,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::SimulateBoundary => "simulate-boundary",
            Scenario::Evolve => "evolve",
            Scenario::Ensemble => "ensemble",
            Scenario::MeasureDemo => "measure-demo",
            Scenario::ManifoldDemo => "manifold-demo",
            Scenario::FiniteWellLimit => "finite-well-limit",
            Scenario::Validate => "validate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitsConfig {
    pub hbar: f64,
    pub l0: f64,
    pub mass: f64,
    pub k_b: f64,
}

impl Default for UnitsConfig {
    fn default() -> Self {
        let u = Units::default();
        Self {
            hbar: u.hbar,
            l0: u.l0,
            mass: u.mass,
            k_b: u.k_b,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffineConfig {
    pub c: f64,
    pub x: f64,
    pub t: f64,
}

impl From<AffineConfig> for Affine {
    fn from(a: AffineConfig) -> Self {
        Affine { c: a.c, x: a.x, t: a.t }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LangevinFormConfig {
    #[default]
    Exact,
    Reduced,
}

/// Boundary model, selected by `model.kind`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Generic {
        #[serde(default)]
        mu_a: AffineConfig,
        #[serde(default)]
        sigma_a: AffineConfig,
        #[serde(default)]
        mu_b: AffineConfig,
        #[serde(default)]
        sigma_b: AffineConfig,
    },
    Dyson {
        beta: f64,
        sigma_a: f64,
        sigma_b: f64,
    },
    Langevin {
        gamma: f64,
        temperature: f64,
        #[serde(default)]
        form: LangevinFormConfig,
        #[serde(default)]
        repulsion: f64,
    },
    Overdamped {
        d: f64,
        gamma: f64,
        #[serde(default)]
        repulsion: f64,
    },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Dyson {
            beta: 1.0,
            sigma_a: 1.0,
            sigma_b: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeConfig {
    #[default]
    EulerMaruyama,
    Milstein,
    StratonovichMidpoint,
}

impl From<SchemeConfig> for StepScheme {
    fn from(s: SchemeConfig) -> Self {
        match s {
            SchemeConfig::EulerMaruyama => StepScheme::EulerMaruyama,
            SchemeConfig::Milstein => StepScheme::Milstein,
            SchemeConfig::StratonovichMidpoint => StepScheme::StratonovichMidpoint,
        }
    }
}

/// Initial endpoints and velocities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub a: f64,
    pub b: f64,
    pub v_a: f64,
    pub v_b: f64,
    pub scheme: SchemeConfig,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            a: -1.0,
            b: 1.0,
            v_a: 0.0,
            v_b: 0.0,
            scheme: SchemeConfig::EulerMaruyama,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub trajectories: usize,
    pub record_every: u64,
    /// Full-state snapshots every this many steps; 0 disables them.
    pub snapshot_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            horizon: 0.1,
            seed: 1,
            trajectories: 100,
            record_every: 10,
            snapshot_every: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardConfig {
    pub eps_min: f64,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self { eps_min: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisConfig {
    #[default]
    Dirichlet,
    QuasiPeriodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolutionSchemeConfig {
    Ito,
    ItoMilstein,
    #[default]
    Stratonovich,
}

impl From<EvolutionSchemeConfig> for EvolutionScheme {
    fn from(s: EvolutionSchemeConfig) -> Self {
        match s {
            EvolutionSchemeConfig::Ito => EvolutionScheme::Ito,
            EvolutionSchemeConfig::ItoMilstein => EvolutionScheme::ItoMilstein,
            EvolutionSchemeConfig::Stratonovich => EvolutionScheme::StratonovichUnitary,
        }
    }
}

/// Initial state in frame coordinates `x` in `[-1/2, 1/2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialState {
    /// One basis function.
    Mode { index: usize },
    /// `exp(-(x - center)^2 / (4 width^2) + i wavenumber x)` projected on the basis.
    Gaussian { center: f64, width: f64, wavenumber: f64 },
    /// Lowest eigenvector of the transformed Hamiltonian at the initial frame.
    Ground,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub basis: BasisConfig,
    pub n: usize,
    pub theta: f64,
    pub scheme: EvolutionSchemeConfig,
    pub renormalize: bool,
    pub drift_factor: f64,
    pub initial: InitialState,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            basis: BasisConfig::Dirichlet,
            n: 32,
            theta: 0.0,
            scheme: EvolutionSchemeConfig::Stratonovich,
            renormalize: false,
            drift_factor: stochframe_core::evolution::DRIFT_FACTOR,
            initial: InitialState::Ground,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HamiltonianConfig {
    Free,
    Harmonic { omega: f64 },
}

impl Default for HamiltonianConfig {
    fn default() -> Self {
        HamiltonianConfig::Harmonic { omega: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservableKind {
    Norm,
    Position,
    Momentum,
    Energy,
    Length,
}

impl ObservableKind {
    pub fn label(self) -> &'static str {
        match self {
            ObservableKind::Norm => "norm",
            ObservableKind::Position => "position",
            ObservableKind::Momentum => "momentum",
            ObservableKind::Energy => "energy",
            ObservableKind::Length => "length",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub observables: Vec<ObservableKind>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            observables: vec![
                ObservableKind::Norm,
                ObservableKind::Position,
                ObservableKind::Momentum,
                ObservableKind::Energy,
            ],
        }
    }
}

/// `base + amplitude cos(2 pi wavenumber x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub base: f64,
    pub amplitude: f64,
    pub wavenumber: f64,
}

impl ProfileConfig {
    pub const fn constant(base: f64) -> Self {
        Self {
            base,
            amplitude: 0.0,
            wavenumber: 0.0,
        }
    }
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self::constant(0.0)
    }
}

impl From<ProfileConfig> for measure::Profile {
    fn from(p: ProfileConfig) -> Self {
        measure::Profile {
            base: p.base,
            amplitude: p.amplitude,
            wavenumber: p.wavenumber,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacketConfig {
    pub center: f64,
    pub width: f64,
    pub wavenumber: f64,
}

impl Default for PacketConfig {
    fn default() -> Self {
        Self {
            center: 0.5,
            width: 0.08,
            wavenumber: 2.0,
        }
    }
}

impl From<PacketConfig> for measure::Packet {
    fn from(p: PacketConfig) -> Self {
        measure::Packet {
            center: p.center,
            width: p.width,
            wavenumber: p.wavenumber,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    Generic,
    #[default]
    LogOu,
}

/// Stochastic measure on the 1D torus. `model` selects which of the
/// coefficient groups is read: `mu`/`sigma` for `generic`,
/// `kappa`/`level`/`s` for `log-ou`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    pub model: MeasureKind,
    pub mu: ProfileConfig,
    pub sigma: ProfileConfig,
    pub kappa: f64,
    pub level: ProfileConfig,
    pub s: f64,
    pub initial: ProfileConfig,
    pub packet: PacketConfig,
    pub potential: ProfileConfig,
    pub scheme: SchemeConfig,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            model: MeasureKind::LogOu,
            mu: ProfileConfig::default(),
            sigma: ProfileConfig::default(),
            kappa: 2.0,
            level: ProfileConfig {
                base: 0.0,
                amplitude: 0.2,
                wavenumber: 1.0,
            },
            s: 0.5,
            initial: ProfileConfig {
                base: 1.0,
                amplitude: 0.2,
                wavenumber: 1.0,
            },
            packet: PacketConfig::default(),
            potential: ProfileConfig {
                base: 0.0,
                amplitude: 5.0,
                wavenumber: 1.0,
            },
            scheme: SchemeConfig::Milstein,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    /// `dg = alpha dt + beta dW` componentwise, both scaled by
    /// `1 + modulation cos(2 pi (x + y + z))`.
    #[default]
    Modulated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientConfig {
    #[default]
    Derived,
    Printed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepresentationConfig {
    #[default]
    Flat,
    Hk,
}

impl From<RepresentationConfig> for Representation {
    fn from(r: RepresentationConfig) -> Self {
        match r {
            RepresentationConfig::Flat => Representation::Flat,
            RepresentationConfig::Hk => Representation::Hk,
        }
    }
}

/// Stochastic metric on the 3D torus. Symmetric tensors are listed as
/// `[xx, yy, zz, yx, zx, zy]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub model: MetricKind,
    pub alpha: [f64; 6],
    pub beta: [f64; 6],
    pub modulation: f64,
    pub initial_modulation: f64,
    pub potential: f64,
    pub packet: PacketConfig,
    pub coefficient: CoefficientConfig,
    pub representation: RepresentationConfig,
    pub scheme: SchemeConfig,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            model: MetricKind::Modulated,
            alpha: [0.1, -0.05, 0.02, 0.01, 0.0, -0.01],
            beta: [0.3, 0.2, 0.25, 0.1, 0.05, 0.1],
            modulation: 0.3,
            initial_modulation: 0.2,
            potential: 5.0,
            packet: PacketConfig::default(),
            coefficient: CoefficientConfig::Derived,
            representation: RepresentationConfig::Flat,
            scheme: SchemeConfig::Milstein,
        }
    }
}

/// Grid of the measure (1D) or metric (3D) demos.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub shape: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { shape: vec![256] }
    }
}

/// Bounds on the measure density or on `sqrt(det g)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub low: f64,
    pub high: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { low: 0.1, high: 10.0 }
    }
}

/// Fixed-grid reference solver and the well-height ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub points: usize,
    pub margin: f64,
    /// Reference steps per frame step.
    pub substeps: u64,
    pub ladder: Vec<f64>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            points: 4096,
            margin: 0.2,
            substeps: 1,
            ladder: vec![1e2, 1e3, 1e4, 1e5],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Criteria to run, by number; empty runs all of them.
    pub criteria: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Payload {
    #[default]
    Csv,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub format: Format,
    /// Write the operators of the initial frame.
    pub operator_dump: bool,
    pub operator_payload: Payload,
    pub increments: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            format: Format::Csv,
            operator_dump: false,
            operator_payload: Payload::Csv,
            increments: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Option<Scenario>,
    pub units: UnitsConfig,
    pub model: ModelConfig,
    pub boundary: BoundaryConfig,
    pub run: RunConfig,
    pub guard: GuardConfig,
    pub frame: FrameConfig,
    pub hamiltonian: HamiltonianConfig,
    pub ensemble: EnsembleConfig,
    pub measure: MeasureConfig,
    pub metric: MetricConfig,
    pub grid: GridConfig,
    pub bounds: BoundsConfig,
    pub reference: ReferenceConfig,
    pub validate: ValidateConfig,
    pub output: OutputConfig,
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Core errors raised while interpreting a config are config errors, not
/// numerical aborts.
fn invalid(e: stochframe_core::Error) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|source| HarnessError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Canonical serialisation; parsing it gives back an equal config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    /// Hex SHA-256 of [`to_toml`](Self::to_toml).
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Range checks that do not need a scenario.
    pub fn validate(&self) -> Result<()> {
        let u = &self.units;
        for (name, v) in [("units.hbar", u.hbar), ("units.l0", u.l0), ("units.mass", u.mass), ("units.k_b", u.k_b)] {
            positive(name, v)?;
        }
        positive("run.dt", self.run.dt)?;
        if !(self.run.horizon >= 0.0 && self.run.horizon.is_finite()) {
            return Err(config_err("run.horizon must be finite and non-negative"));
        }
        // TOML integers are signed 64-bit.
        if self.run.seed > i64::MAX as u64 {
            return Err(config_err("run.seed must fit in a signed 64-bit integer"));
        }
        if !(self.guard.eps_min >= 0.0) {
            return Err(config_err("guard.eps_min must be non-negative"));
        }
        if self.frame.n == 0 {
            return Err(config_err("frame.n must be positive"));
        }
        if self.boundary.a == self.boundary.b {
            return Err(config_err("boundary.a and boundary.b coincide"));
        }
        self.steps()?;
        self.boundary_model()?.validate().map_err(invalid)?;
        Ok(())
    }

    pub fn units(&self) -> Units {
        Units {
            hbar: self.units.hbar,
            l0: self.units.l0,
            mass: self.units.mass,
            k_b: self.units.k_b,
        }
    }

    pub fn steps(&self) -> Result<u64> {
        let cfg = EvolutionConfig {
            dt: self.run.dt,
            horizon: self.run.horizon,
            scheme: self.frame.scheme.into(),
            renormalize: false,
            drift_factor: 1.0,
        };
        cfg.steps().map_err(invalid)
    }

    pub fn boundary_model(&self) -> Result<BoundaryModel> {
        Ok(match self.model {
            ModelConfig::Generic {
                mu_a,
                sigma_a,
                mu_b,
                sigma_b,
            } => BoundaryModel::Generic {
                mu_a: mu_a.into(),
                sigma_a: sigma_a.into(),
                mu_b: mu_b.into(),
                sigma_b: sigma_b.into(),
            },
            ModelConfig::Dyson { beta, sigma_a, sigma_b } => BoundaryModel::Dyson { beta, sigma_a, sigma_b },
            ModelConfig::Langevin {
                gamma,
                temperature,
                form,
                repulsion,
            } => BoundaryModel::Langevin {
                mass: self.units.mass,
                gamma,
                temperature,
                k_b: self.units.k_b,
                form: match form {
                    LangevinFormConfig::Exact => LangevinForm::Exact,
                    LangevinFormConfig::Reduced => LangevinForm::Reduced,
                },
                repulsion,
            },
            ModelConfig::Overdamped { d, gamma, repulsion } => BoundaryModel::Overdamped { d, gamma, repulsion },
        })
    }

    pub fn stepper(&self) -> Result<BoundaryStepper> {
        Ok(BoundaryStepper::new(self.boundary_model()?).map_err(invalid)?
            .with_scheme(self.boundary.scheme.into())
            .with_guard(self.guard.eps_min)
            .with_l0(self.units.l0))
    }

    pub fn initial_frame(&self) -> Result<FrameState> {
        let b = &self.boundary;
        Ok(FrameState::new(b.a, b.b, self.units.l0).map_err(invalid)?.with_velocities(b.v_a, b.v_b))
    }

    /// Noise for trajectory `seed`: one channel per endpoint.
    pub fn noise(&self, seed: u64) -> Result<NoiseSource> {
        NoiseSource::new(seed, 2, self.run.dt).map_err(invalid)
    }

    /// Seeds of an ensemble: `run.seed, run.seed + 1, ...`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.run.trajectories as u64).map(|j| self.run.seed.wrapping_add(j)).collect()
    }

    pub fn basis_kind(&self) -> BasisKind {
        match self.frame.basis {
            BasisConfig::Dirichlet => BasisKind::DirichletSine,
            BasisConfig::QuasiPeriodic => BasisKind::QuasiPeriodic { theta: self.frame.theta },
        }
    }

    pub fn hamiltonian_spec(&self) -> OperatorSpec {
        match self.hamiltonian {
            HamiltonianConfig::Free => OperatorSpec::free(self.units.mass),
            HamiltonianConfig::Harmonic { omega } => OperatorSpec::harmonic(self.units.mass, omega),
        }
    }

    pub fn assembler(&self) -> Result<Assembler> {
        let basis = Basis::new(self.basis_kind(), self.frame.n, self.units.hbar).map_err(invalid)?;
        Assembler::new(basis, self.hamiltonian_spec()).map_err(invalid)
    }

    pub fn evolution(&self) -> Result<EvolutionConfig> {
        let mut cfg = EvolutionConfig::new(self.run.dt, self.run.horizon, self.frame.scheme.into()).map_err(invalid)?;
        cfg.renormalize = self.frame.renormalize;
        cfg.drift_factor = self.frame.drift_factor;
        Ok(cfg)
    }

    pub fn recording(&self) -> Recording {
        Recording {
            every: self.run.record_every,
            snapshot_every: self.run.snapshot_every,
        }
    }

    pub fn initial_state(&self, asm: &Assembler) -> Result<StateVector> {
        let n = asm.basis().dim();
        let mut s = match self.frame.initial {
            InitialState::Mode { index } => {
                if index >= n {
                    return Err(config_err(format!("frame.initial.index {index} outside basis of size {n}")));
                }
                StateVector::basis_vector(n, index)
            }
            InitialState::Gaussian {
                center,
                width,
                wavenumber,
            } => {
                positive("frame.initial.width", width)?;
                StateVector::new(asm.basis().project_function(|x| {
                    let d = x - center;
                    C64::from_polar((-d * d / (4.0 * width * width)).exp(), wavenumber * x)
                }))
            }
            InitialState::Ground => {
                let k = asm.k(Frame::from_state(&self.initial_frame()?)).map_err(invalid)?;
                StateVector::new(eigh(&k).map_err(invalid)?.vector(0))
            }
        };
        if !(s.norm_sqr() > 0.0) {
            return Err(config_err("initial state vanishes on this basis"));
        }
        s.normalize();
        Ok(s)
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.bounds.low, self.bounds.high).map_err(invalid)
    }

    pub fn measure_demo(&self) -> Result<MeasureDemo> {
        let points = match self.grid.shape.as_slice() {
            [n] if *n >= 4 => *n,
            _ => return Err(config_err("measure demo needs grid.shape = [n] with n >= 4")),
        };
        let m = &self.measure;
        let model = match m.model {
            MeasureKind::Generic => measure::MeasureModel::Generic {
                mu: m.mu.into(),
                sigma: m.sigma.into(),
            },
            MeasureKind::LogOu => measure::MeasureModel::LogOu {
                kappa: m.kappa,
                level: m.level.into(),
                s: m.s,
            },
        };
        Ok(MeasureDemo {
            points,
            model,
            bounds: self.bounds()?,
            initial: m.initial.into(),
            packet: m.packet.into(),
            mass: self.units.mass,
            hbar: self.units.hbar,
            potential: m.potential.into(),
            dt: self.run.dt,
            steps: self.steps()?,
            scheme: m.scheme.into(),
            record_every: self.run.record_every,
        })
    }

    pub fn manifold_demo(&self) -> Result<ManifoldDemo> {
        let shape = match self.grid.shape.as_slice() {
            [x, y, z] if *x >= 4 && *y >= 4 && *z >= 4 => [*x, *y, *z],
            _ => return Err(config_err("manifold demo needs grid.shape = [nx, ny, nz], each >= 4")),
        };
        let m = &self.metric;
        Ok(ManifoldDemo {
            shape,
            model: MetricModel {
                alpha: m.alpha,
                beta: m.beta,
                modulation: m.modulation,
            },
            bounds: self.bounds()?,
            initial_modulation: m.initial_modulation,
            packet: m.packet.into(),
            mass: self.units.mass,
            hbar: self.units.hbar,
            potential: m.potential,
            dt: self.run.dt,
            steps: self.steps()?,
            representation: m.representation.into(),
            coefficient: match m.coefficient {
                CoefficientConfig::Derived => NoiseCoefficient::Derived,
                CoefficientConfig::Printed => NoiseCoefficient::Printed,
            },
            scheme: m.scheme.into(),
            record_every: self.run.record_every,
        })
    }
}
