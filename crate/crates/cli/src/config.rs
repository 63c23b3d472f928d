//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sketchfl::attack::{AttackModel, Region};
use sketchfl::bounds::Regime;
use sketchfl::fed::RunConfig;
use sketchfl::objectives::{gen_synthetic, FederatedObjective, ObjectiveKind};
use sketchfl::privacy::DpSpec;
use sketchfl::sketch::{SketchKind, SketchSpec};

/// A configuration that cannot be loaded or is incomplete.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("missing section `{0}`")]
    Missing(&'static str),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot serialize config: {0}")]
    Serialize(String),
}

/// Synthetic federated objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub n_clients: usize,
    pub d: usize,
    pub n_per_client: usize,
    pub heterogeneity: f64,
    #[serde(default)]
    pub data_seed: u64,
    /// Parameter ball for quadratic clients, needed by private runs.
    #[serde(default)]
    pub ball_radius: Option<f64>,
}

impl ObjectiveSpec {
    pub fn build(&self) -> sketchfl::Result<FederatedObjective> {
        let obj = gen_synthetic(
            self.kind,
            self.n_clients,
            self.d,
            self.n_per_client,
            self.heterogeneity,
            self.data_seed,
        )?;
        Ok(match self.ball_radius {
            Some(r) => obj.with_ball(r),
            None => obj,
        })
    }
}

/// `verify-sketch` settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub kinds: Vec<SketchKind>,
    pub d: usize,
    pub b_sketch: usize,
    pub trials: usize,
    /// Second-moment constant used for every kind instead of its own.
    #[serde(default)]
    pub a_override: Option<f64>,
}

fn default_samples() -> usize {
    2000
}

fn default_t_attack() -> usize {
    5000
}

fn default_floor() -> f64 {
    1e-14
}

/// `attack` settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub model: AttackModel,
    /// Private input; used to synthesize the observation when no gradient
    /// file is given, and to report reconstruction error.
    #[serde(default)]
    pub x_true: Option<Vec<f64>>,
    /// CSV holding the observed gradient (or sketched gradient), one value
    /// per line or one row; relative to the config file.
    #[serde(default)]
    pub observed_csv: Option<PathBuf>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub sketch: Option<SketchSpec>,
    #[serde(default)]
    pub sketch_round: u64,
    pub region: Region,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Step size used instead of the measured step rule.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_t_attack")]
    pub t_attack: usize,
    #[serde(default)]
    pub multi_start: usize,
    /// Loss below which the rate certificate stops checking.
    #[serde(default = "default_floor")]
    pub stop_floor: f64,
    /// Required `‖x_T − x̃‖/‖x̃‖`.
    #[serde(default)]
    pub target_error: Option<f64>,
}

/// `sweep` settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Sketch sizes, `{d, d/2, d/4, d/8}` when absent.
    #[serde(default)]
    pub b_values: Option<Vec<usize>>,
    pub target_eps: f64,
    pub max_rounds: usize,
    /// Allowed ratio between the largest and smallest total bits.
    #[serde(default)]
    pub max_bits_ratio: Option<f64>,
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub objective: Option<ObjectiveSpec>,
    #[serde(default)]
    pub run: Option<RunConfig>,
    /// Replace `run.eta_local` by the largest step the bounds allow:
    /// `1/((1+α)L)` for `K = 1`, `1/(8(1+α)LK)` otherwise.
    #[serde(default)]
    pub guard_step: bool,
    /// Bound family for the overlay; inferred from the objective when absent.
    #[serde(default)]
    pub regime: Option<Regime>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub privacy: Option<DpSpec>,
    #[serde(default)]
    pub attack: Option<AttackSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when `path` ends in `.json`.
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Loads a config and resolves file references against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(a) = cfg.attack.as_mut() {
            if let Some(p) = a.observed_csv.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Serialize(e.to_string()))
    }

    pub fn objective(&self) -> Result<&ObjectiveSpec, ConfigError> {
        self.objective.as_ref().ok_or(ConfigError::Missing("objective"))
    }

    pub fn run(&self) -> Result<&RunConfig, ConfigError> {
        self.run.as_ref().ok_or(ConfigError::Missing("run"))
    }
}
