//! Scenario files: one TOML document per run, parsed strictly.
//!
//! ```toml
//! task = "cw-spectrum"
//! engines = ["oracle", "factorized", "qrt"]
//!
//! [model]
//! detuning = 0.245
//! rabi = 0.001
//! gamma = 0.01
//! [[model.modes]]
//! energy = 2.0
//! coupling = 0.7
//! damping = 2.0
//! truncation = 4
//!
//! [numerics]
//! dt = 0.1
//! t_max = 60.0
//!
//! [cw_spectrum]
//! omega = { start = -5.0, stop = 5.0, points = 400 }
//! linewidth = 0.0152
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, ONE};
use crate::maps::MapOptions;
use crate::models::{
    build_tls_boson_model, build_tls_lindblad_model, sigma_minus, sigma_plus, BosonMode, EmbeddingModel, PulseShape,
    TlsBosonParams,
};
use crate::observables::{uniform_grid, Engine};
use crate::tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    MemoryTime,
    MapExtrapolation,
    G1,
    CwSpectrum,
    PulsedSpectrum,
    G2,
    Correlator,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::MemoryTime => "memory-time",
            Task::MapExtrapolation => "map-extrapolation",
            Task::G1 => "g1",
            Task::CwSpectrum => "cw-spectrum",
            Task::PulsedSpectrum => "pulsed-spectrum",
            Task::G2 => "g2",
            Task::Correlator => "correlator",
        }
    }
}

/// How the environment is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Damped truncated bosonic modes.
    #[default]
    TlsBoson,
    /// Radiative decay only, no environment (`D_E = 1`).
    TlsLindblad,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub kind: ModelKind,
    /// Emitter transition minus frame frequency, in meV.
    #[serde(default)]
    pub detuning: f64,
    /// cw Rabi energy in meV.
    #[serde(default)]
    pub rabi: f64,
    /// Radiative decay rate in 1/ps.
    pub gamma: f64,
    /// Temperature in K.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub modes: Vec<BosonMode>,
}

impl ModelConfig {
    pub fn params(&self) -> TlsBosonParams {
        TlsBosonParams {
            detuning: self.detuning,
            rabi: self.rabi,
            gamma: self.gamma,
            temperature: self.temperature,
            modes: self.modes.clone(),
        }
    }

    pub fn build(&self) -> Result<EmbeddingModel> {
        match self.kind {
            ModelKind::TlsBoson => build_tls_boson_model(&self.params()),
            ModelKind::TlsLindblad => build_tls_lindblad_model(&self.params()),
        }
    }
}

/// Overrides of the tolerance ladder used for engine-agreement checks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceLadder {
    pub map: f64,
    pub correlator: f64,
    pub observable: f64,
}

impl Default for ToleranceLadder {
    fn default() -> Self {
        Self {
            map: tolerances::MAP,
            correlator: tolerances::CORRELATOR,
            observable: tolerances::OBSERVABLE,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub dt: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Horizon of the memory-time scan in ps.
    pub t_max: f64,
    #[serde(default)]
    pub tolerances: ToleranceLadder,
}

fn default_threshold() -> f64 {
    tolerances::STATIONARITY
}

impl Numerics {
    pub fn map_options(&self) -> MapOptions {
        MapOptions {
            dt: self.dt,
            threshold: self.threshold,
            t_max: self.t_max,
        }
    }
}

/// `points` equally spaced values from `start` to `stop`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        uniform_grid(self.start, self.stop, self.points)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.points == 0 || !self.start.is_finite() || !self.stop.is_finite() || self.stop < self.start {
            return Err(Error::Validation(format!("{what}: invalid grid")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapExtrapolationConfig {
    /// Largest time in units of `tau_c`.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_horizon() -> f64 {
    20.0
}

fn default_points() -> usize {
    40
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G1Config {
    /// Delays in ps.
    pub tau: Grid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwSpectrumConfig {
    /// Angular frequencies in 1/ps.
    pub omega: Grid,
    /// Detector linewidth in 1/ps.
    pub linewidth: f64,
    /// Oracle delay horizon in units of `tau_c`.
    #[serde(default = "default_oracle_span")]
    pub oracle_span: f64,
}

fn default_oracle_span() -> f64 {
    100.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulsedSpectrumConfig {
    pub pulse: PulseShape,
    pub omega: Grid,
    #[serde(default)]
    pub linewidth: f64,
    /// Internal region boundary in ps; defaults to `tau_c`.
    pub split: Option<f64>,
    /// Oracle horizon in `t` and `tau`, in units of `tau_c`.
    #[serde(default = "default_oracle_span")]
    pub oracle_span: f64,
    /// Initial emitter state.
    #[serde(default)]
    pub initial: InitialState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G2Config {
    /// Pulse-train period in ps.
    pub period: f64,
    pub pulse: PulseShape,
    /// Keep every `stride`-th row and column of the G2 grid in the CSV.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    #[default]
    Ground,
    Excited,
}

impl InitialState {
    pub fn density_matrix(&self) -> CMatrix {
        let mut rho = CMatrix::zeros((2, 2));
        match self {
            InitialState::Ground => rho[[0, 0]] = ONE,
            InitialState::Excited => rho[[1, 1]] = ONE,
        }
        rho
    }
}

/// Two-level operators addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedOperator {
    Identity,
    SigmaMinus,
    SigmaPlus,
    /// `sigma+ sigma-`.
    Number,
}

impl NamedOperator {
    pub fn matrix(&self) -> CMatrix {
        match self {
            NamedOperator::Identity => linalg::identity(2),
            NamedOperator::SigmaMinus => sigma_minus(),
            NamedOperator::SigmaPlus => sigma_plus(),
            NamedOperator::Number => sigma_plus().dot(&sigma_minus()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum EventConfig {
    /// `rho -> A rho B^dag` at `time`.
    Sandwich {
        time: f64,
        left: NamedOperator,
        right: NamedOperator,
    },
    /// Pulse occupying `[time, time + duration]`.
    Pulse { time: f64, pulse: PulseShape },
}

impl EventConfig {
    pub fn time(&self) -> f64 {
        match self {
            EventConfig::Sandwich { time, .. } | EventConfig::Pulse { time, .. } => *time,
        }
    }
}

/// Random sandwich events for property runs; times drawn uniformly in
/// `[t0, final_time]` from the run seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomEvents {
    pub count: usize,
    #[serde(default = "default_random_ops")]
    pub operators: Vec<NamedOperator>,
}

fn default_random_ops() -> Vec<NamedOperator> {
    vec![
        NamedOperator::SigmaMinus,
        NamedOperator::SigmaPlus,
        NamedOperator::Identity,
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelatorConfig {
    #[serde(default)]
    pub t0: f64,
    pub final_time: f64,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub events: Vec<EventConfig>,
    pub random: Option<RandomEvents>,
    /// Final observable; omitted means the full reduced map.
    pub measure: Option<NamedOperator>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Timed repetitions per engine; the median is reported.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Optional sweep over the truncation of the first mode.
    #[serde(default)]
    pub truncations: Vec<usize>,
}

fn default_repeats() -> usize {
    3
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            repeats: default_repeats(),
            truncations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub task: Task,
    #[serde(default = "default_engines")]
    pub engines: Vec<Engine>,
    /// Default output directory; the command line takes precedence.
    pub output_dir: Option<String>,
    /// Default seed for randomized scenarios; the command line takes precedence.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub numerics: Numerics,
    pub map_extrapolation: Option<MapExtrapolationConfig>,
    pub g1: Option<G1Config>,
    pub cw_spectrum: Option<CwSpectrumConfig>,
    pub pulsed_spectrum: Option<PulsedSpectrumConfig>,
    pub g2: Option<G2Config>,
    pub correlator: Option<CorrelatorConfig>,
    pub bench: Option<BenchConfig>,
}

fn default_engines() -> Vec<Engine> {
    vec![Engine::Factorized]
}

fn finite(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Validation(format!("{name} must be finite")));
    }
    Ok(())
}

fn missing(task: Task) -> Error {
    Error::Config(format!(
        "task {} needs a [{}] section",
        task.name(),
        task.name().replace('-', "_")
    ))
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.model;
        for (name, v) in [
            ("model.detuning", p.detuning),
            ("model.rabi", p.rabi),
            ("model.gamma", p.gamma),
            ("model.temperature", p.temperature),
        ] {
            finite(name, v)?;
        }
        for m in &p.modes {
            for (name, v) in [
                ("mode energy", m.energy),
                ("mode coupling", m.coupling),
                ("mode damping", m.damping),
            ] {
                finite(name, v)?;
            }
        }
        let n = &self.numerics;
        if !(n.dt > 0.0) || !n.dt.is_finite() || !(n.t_max > n.dt) || !n.t_max.is_finite() || !(n.threshold > 0.0) {
            return Err(Error::Validation(
                "numerics need dt > 0, t_max > dt and threshold > 0".into(),
            ));
        }
        let ladder = &n.tolerances;
        if !(ladder.map > 0.0 && ladder.correlator > 0.0 && ladder.observable > 0.0) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        if self.engines.is_empty() {
            return Err(Error::Validation("at least one engine is required".into()));
        }
        match self.task {
            Task::MemoryTime => {}
            Task::MapExtrapolation => {
                if let Some(c) = &self.map_extrapolation {
                    if !(c.horizon >= 1.0) || c.points == 0 {
                        return Err(Error::Validation(
                            "map_extrapolation needs horizon >= 1 and points > 0".into(),
                        ));
                    }
                }
            }
            Task::G1 => {
                let c = self.g1.as_ref().ok_or_else(|| missing(self.task))?;
                c.tau.validate("g1.tau")?;
                if c.tau.start < 0.0 {
                    return Err(Error::Validation("g1.tau must be >= 0".into()));
                }
            }
            Task::CwSpectrum => {
                let c = self.cw_spectrum.as_ref().ok_or_else(|| missing(self.task))?;
                c.omega.validate("cw_spectrum.omega")?;
                finite("cw_spectrum.linewidth", c.linewidth)?;
                if !(c.oracle_span > 1.0) {
                    return Err(Error::Validation("cw_spectrum.oracle_span must exceed 1".into()));
                }
            }
            Task::PulsedSpectrum => {
                let c = self.pulsed_spectrum.as_ref().ok_or_else(|| missing(self.task))?;
                c.omega.validate("pulsed_spectrum.omega")?;
                c.pulse.validate()?;
                if !(c.linewidth >= 0.0) {
                    return Err(Error::Validation("pulsed_spectrum.linewidth must be >= 0".into()));
                }
            }
            Task::G2 => {
                let c = self.g2.as_ref().ok_or_else(|| missing(self.task))?;
                c.pulse.validate()?;
                if !(c.period > 0.0) || c.stride == 0 {
                    return Err(Error::Validation("g2 needs period > 0 and stride >= 1".into()));
                }
            }
            Task::Correlator => {
                let c = self.correlator.as_ref().ok_or_else(|| missing(self.task))?;
                finite("correlator.t0", c.t0)?;
                finite("correlator.final_time", c.final_time)?;
                for e in &c.events {
                    finite("event time", e.time())?;
                    if let EventConfig::Pulse { pulse, .. } = e {
                        pulse.validate()?;
                    }
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the parsed configuration.
    pub fn inputs_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
