//! Campaign configuration: the JSON document, CLI overrides, and the
//! fully validated form the runner consumes.
//!
//! A config file names everything a campaign needs — mode, iteration
//! budget, seed, the test-suite manifest, the SUT (synthetic oracle
//! spec or external command), feature source, exploration and scorer
//! settings, and artifact paths. Input paths resolve relative to the
//! config file's directory; artifact paths resolve under `--out-dir`
//! when given, otherwise also next to the config. [`resolve`] loads and
//! validates every referenced file up front, so a run that starts has a
//! sound suite behind it.

use std::fs;
use std::path::{Path, PathBuf};

use morphic_core::bandit::{ExplorationConfig, ScorerKind};
use morphic_core::oracle::OracleSpec;
use morphic_core::relations::MrKind;
use morphic_core::sut::Task;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::manifest::{load_manifest, Manifest, ManifestError};
use crate::formats::sidecar::{load_sidecar, SidecarError, SidecarFeatures};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
}

impl ConfigError {
    fn invalid(path: &Path, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }
}

/// Campaign mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Adaptive metamorphic testing: the hierarchy selects and learns.
    Amt,
    /// Uniform relation and parameter choice, no learning.
    Random,
    /// Exhaustive sweep of all 59 relation/parameter combinations.
    Baseline,
    /// One fixed relation; only its parameter bandit selects and learns.
    Boundary,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Amt => "amt",
            Mode::Random => "random",
            Mode::Baseline => "baseline",
            Mode::Boundary => "boundary",
        }
    }

    /// Whether the mode carries bandit state worth snapshotting.
    pub fn learns(self) -> bool {
        matches!(self, Mode::Amt | Mode::Boundary)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The system under test: a synthetic oracle spec file or an external
/// command speaking the line-JSON protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SutSpec {
    Oracle {
        oracle: PathBuf,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

/// Where context vectors come from: the built-in 88-value extractor or
/// a sidecar CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureSpec {
    /// Only `"builtin"` is accepted.
    Keyword(String),
    Sidecar {
        sidecar: PathBuf,
    },
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec::Keyword("builtin".into())
    }
}

/// Exploration settings with config-file defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum ExplorationSettings {
    EpsilonGreedy {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Cover {
        #[serde(default = "default_policies")]
        policies: usize,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

impl Default for ExplorationSettings {
    fn default() -> Self {
        ExplorationSettings::EpsilonGreedy {
            epsilon: default_epsilon(),
        }
    }
}

impl ExplorationSettings {
    pub fn to_core(self) -> ExplorationConfig {
        match self {
            ExplorationSettings::EpsilonGreedy { epsilon } => {
                ExplorationConfig::EpsilonGreedy { epsilon }
            }
            ExplorationSettings::Cover { policies, epsilon } => {
                ExplorationConfig::Cover { policies, epsilon }
            }
        }
    }
}

/// Scorer settings with config-file defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerSettings {
    #[serde(default = "default_scorer")]
    pub kind: ScorerKind,
    /// Learning rate of the relation-level bandit.
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Learning rate of the parameter bandits; defaults to
    /// `learning_rate`.
    #[serde(default)]
    pub param_learning_rate: Option<f64>,
}

impl Default for ScorerSettings {
    fn default() -> Self {
        ScorerSettings {
            kind: default_scorer(),
            learning_rate: default_learning_rate(),
            param_learning_rate: None,
        }
    }
}

/// How sources are drawn each iteration. Ignored by baseline mode,
/// which always sweeps the manifest in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Uniform with replacement from the manifest.
    #[default]
    Uniform,
    /// Manifest order, wrapping around.
    Sequential,
}

fn default_timeout() -> u64 {
    30
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_policies() -> usize {
    3
}

fn default_scorer() -> ScorerKind {
    ScorerKind::Linear
}

fn default_learning_rate() -> f64 {
    0.05
}

/// The config file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub mode: Mode,
    pub iterations: u64,
    pub seed: u64,
    pub manifest: PathBuf,
    pub sut: SutSpec,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default)]
    pub exploration: ExplorationSettings,
    #[serde(default)]
    pub scorer: ScorerSettings,
    #[serde(default)]
    pub sampling: Sampling,
    /// Required in boundary mode, forbidden otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_mr: Option<MrKind>,
    /// Log path; defaults to `<mode>.jsonl`. Not used by baseline mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
    /// Baseline table path; defaults to `baseline.csv`. Baseline only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_in: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_out: Option<PathBuf>,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub snapshot_in: Option<PathBuf>,
    pub snapshot_out: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// The SUT after validation.
#[derive(Debug, Clone)]
pub enum SutBackendSpec {
    Oracle(OracleSpec),
    External { command: Vec<String>, timeout_secs: u64 },
}

/// The feature source after validation.
#[derive(Debug, Clone)]
pub enum FeatureSource {
    Builtin,
    Sidecar(SidecarFeatures),
}

impl FeatureSource {
    pub fn dim(&self) -> usize {
        match self {
            FeatureSource::Builtin => morphic_core::features::BUILTIN_DIM,
            FeatureSource::Sidecar(side) => side.dim(),
        }
    }
}

/// Everything a campaign run needs, fully loaded and validated.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub mode: Mode,
    pub iterations: u64,
    pub seed: u64,
    pub manifest: Manifest,
    pub sut: SutBackendSpec,
    pub features: FeatureSource,
    pub exploration: ExplorationConfig,
    pub scorer: ScorerKind,
    pub main_learning_rate: f64,
    pub param_learning_rate: f64,
    pub sampling: Sampling,
    pub boundary_mr: Option<MrKind>,
    /// Destination of the JSONL log (all modes except baseline).
    pub log_path: Option<PathBuf>,
    /// Destination of the violation table (baseline only).
    pub table_path: Option<PathBuf>,
    pub snapshot_in: Option<PathBuf>,
    pub snapshot_out: Option<PathBuf>,
}

/// Parses the config file without resolving anything.
pub fn load_config(path: &Path) -> Result<CampaignConfig, ConfigError> {
    let bytes = fs::read(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| ConfigError::invalid(path, format!("{e}")))
}

/// Applies overrides, resolves paths, and loads every referenced file.
///
/// `config_path` anchors relative input paths and labels errors.
pub fn resolve(
    config: &CampaignConfig,
    config_path: &Path,
    overrides: &Overrides,
) -> Result<ResolvedConfig, ConfigError> {
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let out_base = overrides.out_dir.as_deref().unwrap_or(base);
    let bad = |reason: String| ConfigError::invalid(config_path, reason);

    let iterations = overrides.iterations.unwrap_or(config.iterations);
    if iterations == 0 {
        return Err(bad("iterations must be >= 1".into()));
    }
    let seed = overrides.seed.unwrap_or(config.seed);

    match (config.mode, config.boundary_mr) {
        (Mode::Boundary, None) => {
            return Err(bad("boundary mode requires boundary_mr".into()))
        }
        (Mode::Boundary, Some(mr)) if !mr.parameterized() => {
            return Err(bad(format!("boundary_mr must be parameterized, got {mr}")))
        }
        (Mode::Boundary, Some(_)) => {}
        (_, Some(mr)) => {
            return Err(bad(format!(
                "boundary_mr only applies to boundary mode, got {mr} under {}",
                config.mode
            )))
        }
        (_, None) => {}
    }

    let snapshot_in = overrides
        .snapshot_in
        .clone()
        .or_else(|| config.snapshot_in.clone())
        .map(|p| base.join(p));
    let snapshot_out = overrides
        .snapshot_out
        .clone()
        .or_else(|| config.snapshot_out.clone())
        .map(|p| out_base.join(p));
    if !config.mode.learns() && (snapshot_in.is_some() || snapshot_out.is_some()) {
        return Err(bad(format!(
            "snapshots only apply to amt and boundary modes, not {}",
            config.mode
        )));
    }

    let (log_path, table_path) = match config.mode {
        Mode::Baseline => {
            if config.log.is_some() {
                return Err(bad("baseline mode writes a table, not a log".into()));
            }
            let table = config
                .table
                .clone()
                .unwrap_or_else(|| PathBuf::from("baseline.csv"));
            (None, Some(out_base.join(table)))
        }
        _ => {
            if config.table.is_some() {
                return Err(bad("table output only applies to baseline mode".into()));
            }
            let log = config
                .log
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{}.jsonl", config.mode)));
            (Some(out_base.join(log)), None)
        }
    };

    let exploration = config.exploration.to_core();
    let epsilon = exploration.epsilon();
    if !(epsilon.is_finite() && (0.0..=1.0).contains(&epsilon)) {
        return Err(bad(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if exploration.policy_count() == 0 {
        return Err(bad("cover exploration needs at least one policy".into()));
    }
    let main_learning_rate = config.scorer.learning_rate;
    let param_learning_rate = config
        .scorer
        .param_learning_rate
        .unwrap_or(main_learning_rate);
    for (name, lr) in [
        ("learning_rate", main_learning_rate),
        ("param_learning_rate", param_learning_rate),
    ] {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(bad(format!("{name} must be finite and positive, got {lr}")));
        }
    }

    let manifest = load_manifest(&base.join(&config.manifest))?;

    let features = match &config.features {
        FeatureSpec::Keyword(word) if word == "builtin" => FeatureSource::Builtin,
        FeatureSpec::Keyword(word) => {
            return Err(bad(format!(
                "features must be \"builtin\" or {{\"sidecar\": path}}, got {word:?}"
            )))
        }
        FeatureSpec::Sidecar { sidecar } => {
            let side = load_sidecar(&base.join(sidecar))?;
            side.require_ids(manifest.entries.iter().map(|e| e.id.as_str()))
                .map_err(|reason| bad(reason))?;
            FeatureSource::Sidecar(side)
        }
    };

    let sut = match &config.sut {
        SutSpec::Oracle { oracle } => {
            let path = base.join(oracle);
            let bytes = fs::read(&path).map_err(|source| ConfigError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let spec: OracleSpec = serde_json::from_slice(&bytes)
                .map_err(|e| ConfigError::invalid(&path, format!("{e}")))?;
            spec.validate()
                .map_err(|e| ConfigError::invalid(&path, format!("{e}")))?;
            if manifest.task == Task::Detection && spec.uses_per_class() {
                return Err(ConfigError::invalid(
                    &path,
                    "per-class oracle tables need class labels; detection manifests carry none",
                ));
            }
            if let Task::Classification = manifest.task {
                for entry in &manifest.entries {
                    let class = entry.class.expect("classification manifest");
                    if class >= spec.class_count {
                        return Err(ConfigError::invalid(
                            &path,
                            format!(
                                "source {:?} has class {class}, oracle knows {} classes",
                                entry.id, spec.class_count
                            ),
                        ));
                    }
                }
            }
            SutBackendSpec::Oracle(spec)
        }
        SutSpec::External {
            command,
            timeout_secs,
        } => {
            if command.is_empty() {
                return Err(bad("external SUT command must not be empty".into()));
            }
            if *timeout_secs == 0 {
                return Err(bad("timeout_secs must be >= 1".into()));
            }
            SutBackendSpec::External {
                command: command.clone(),
                timeout_secs: *timeout_secs,
            }
        }
    };

    Ok(ResolvedConfig {
        mode: config.mode,
        iterations,
        seed,
        manifest,
        sut,
        features,
        exploration,
        scorer: config.scorer.kind,
        main_learning_rate,
        param_learning_rate,
        sampling: config.sampling,
        boundary_mr: config.boundary_mr,
        log_path,
        table_path,
        snapshot_in,
        snapshot_out,
    })
}
