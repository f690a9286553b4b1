//! Flat TOML run configuration shared by every command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::breadth::BreadthConfidences;
use crate::embedding::DEFAULT_DIM;
use crate::fusion::HyperParams;
use crate::theorem::{ScenarioMode, SyntheticScenario};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config value: {0}")]
    Range(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Reference,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// One graph pair per trace.
    #[default]
    Signal,
    /// All traces merged into one graph pair.
    Subject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lambda_off: f64,
    pub lambda_ord: f64,
    pub tau: f64,
    pub gamma: f64,
    pub beta: f64,
    pub delta: f64,
    pub l_breadth: usize,
    pub l_depth: usize,
    pub k: usize,
    pub beam: usize,
    pub epsilon_floor: f64,

    pub embedder: EmbedderKind,
    pub embedding_dim: usize,
    pub remote_endpoint: Option<String>,
    pub remote_cache: Option<PathBuf>,

    pub mode: AggregationMode,
    pub parallel: bool,
    pub verifier_command: Option<Vec<String>>,

    pub conf_mentions: f64,
    pub conf_aliases: f64,
    pub conf_defines: f64,
    pub conf_cites: f64,
    pub conf_supports: f64,
    pub conf_derived_from: f64,
    pub aliases: BTreeMap<String, String>,

    pub trace_dir: Option<PathBuf>,
    pub graph_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub rng_seed: u64,

    pub scenario_mode: ScenarioMode,
    pub scenario_answer_count: usize,
    pub scenario_sharpness_b: f64,
    pub scenario_sharpness_d: f64,
    pub scenario_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        let conf = BreadthConfidences::default();
        Self {
            lambda_off: hp.lambda_off,
            lambda_ord: hp.lambda_ord,
            tau: hp.tau,
            gamma: hp.gamma,
            beta: hp.beta,
            delta: hp.delta,
            l_breadth: hp.l_breadth,
            l_depth: hp.l_depth,
            k: hp.k,
            beam: hp.beam,
            epsilon_floor: hp.epsilon_floor,
            embedder: EmbedderKind::Reference,
            embedding_dim: DEFAULT_DIM,
            remote_endpoint: None,
            remote_cache: None,
            mode: AggregationMode::Signal,
            parallel: false,
            verifier_command: None,
            conf_mentions: conf.mentions,
            conf_aliases: conf.aliases,
            conf_defines: conf.defines,
            conf_cites: conf.cites,
            conf_supports: conf.supports_scale,
            conf_derived_from: conf.derived_from,
            aliases: BTreeMap::new(),
            trace_dir: None,
            graph_dir: None,
            out_dir: None,
            rng_seed: 0,
            scenario_mode: ScenarioMode::Calibrated,
            scenario_answer_count: 4,
            scenario_sharpness_b: 1.0,
            scenario_sharpness_d: 2.0,
            scenario_trials: 10_000,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.hyperparams()
            .validate()
            .map_err(|e| ConfigError::Range(e.to_string()))?;
        for (name, c) in [
            ("conf_mentions", self.conf_mentions),
            ("conf_aliases", self.conf_aliases),
            ("conf_defines", self.conf_defines),
            ("conf_cites", self.conf_cites),
            ("conf_supports", self.conf_supports),
            ("conf_derived_from", self.conf_derived_from),
        ] {
            if !(c > 0.0 && c <= 1.0) {
                return Err(ConfigError::Range(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.embedding_dim == 0 {
            return Err(ConfigError::Range("embedding_dim must be >= 1".into()));
        }
        if self.embedder == EmbedderKind::Remote && self.remote_endpoint.is_none() {
            return Err(ConfigError::Range("remote embedder needs remote_endpoint".into()));
        }
        if self.verifier_command.as_ref().is_some_and(|c| c.is_empty()) {
            return Err(ConfigError::Range("verifier_command must name a program".into()));
        }
        self.scenario().validate().map_err(ConfigError::Range)
    }

    pub fn hyperparams(&self) -> HyperParams {
        HyperParams {
            lambda_off: self.lambda_off,
            lambda_ord: self.lambda_ord,
            tau: self.tau,
            gamma: self.gamma,
            beta: self.beta,
            delta: self.delta,
            l_breadth: self.l_breadth,
            l_depth: self.l_depth,
            k: self.k,
            beam: self.beam,
            epsilon_floor: self.epsilon_floor,
        }
    }

    pub fn confidences(&self) -> BreadthConfidences {
        BreadthConfidences {
            mentions: self.conf_mentions,
            aliases: self.conf_aliases,
            defines: self.conf_defines,
            cites: self.conf_cites,
            supports_scale: self.conf_supports,
            derived_from: self.conf_derived_from,
        }
    }

    pub fn scenario(&self) -> SyntheticScenario {
        SyntheticScenario {
            answer_count: self.scenario_answer_count,
            sharpness_b: self.scenario_sharpness_b,
            sharpness_d: self.scenario_sharpness_d,
            mode: self.scenario_mode,
            trials: self.scenario_trials,
            rng_seed: self.rng_seed,
        }
    }
}
