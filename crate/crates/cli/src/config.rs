//! Experiment configuration: a TOML document with a fixed schema.

use std::path::{Path, PathBuf};

use glinbandit::bandit::{Projection, RsOptions, SwitchThreshold};
use glinbandit::design::DistributionalOptions;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Problem {
    /// Stochastic arm sets.
    P1,
    /// Adversarial arm sets.
    P2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bglincb,
    Rsglincb,
    AlwaysUpdate,
    UniformRandom,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Bglincb => "bglincb",
            Self::Rsglincb => "rsglincb",
            Self::AlwaysUpdate => "always_update",
            Self::UniformRandom => "uniform_random",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkName {
    Logistic,
    Probit,
}

impl LinkName {
    pub fn link(self) -> glinbandit::GlmLink {
        match self {
            Self::Logistic => glinbandit::GlmLink::logistic(),
            Self::Probit => glinbandit::GlmLink::probit(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionName {
    Convex,
    Nonconvex,
}

/// One algorithm or a list of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlgorithmSpec {
    One(Algorithm),
    Many(Vec<Algorithm>),
}

impl AlgorithmSpec {
    pub fn list(&self) -> Vec<Algorithm> {
        match self {
            Self::One(a) => vec![*a],
            Self::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    /// Multiplier of the Criterion-I threshold `1 / (gamma^2 kappa R^2)`.
    #[serde(default = "one")]
    pub criterion1_scale: f64,
    /// Absolute Criterion-I threshold; replaces the formula when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion1_threshold: Option<f64>,
    #[serde(default)]
    pub pool_all_data: bool,
    #[serde(default = "convex")]
    pub projection: ProjectionName,
    #[serde(default = "default_ucb_scale")]
    pub ucb_scale: f64,
    /// Softmax exponent of the distributional design.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn one() -> f64 {
    1.0
}

fn convex() -> ProjectionName {
    ProjectionName::Convex
}

fn default_ucb_scale() -> f64 {
    150.0
}

fn default_alpha() -> f64 {
    DistributionalOptions::default().alpha
}

fn default_delta() -> f64 {
    0.05
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_kappa_samples() -> usize {
    10_000
}

impl Default for Flags {
    fn default() -> Self {
        Self {
            criterion1_scale: one(),
            criterion1_threshold: None,
            pool_all_data: false,
            projection: convex(),
            ucb_scale: default_ucb_scale(),
            alpha: default_alpha(),
        }
    }
}

impl Flags {
    pub fn rs_options(&self, always_update: bool) -> RsOptions {
        RsOptions {
            threshold: match self.criterion1_threshold {
                Some(v) => SwitchThreshold::Fixed(v),
                None => SwitchThreshold::Formula {
                    scale: self.criterion1_scale,
                },
            },
            pool_all_data: self.pool_all_data,
            projection: match self.projection {
                ProjectionName::Convex => Projection::Convex,
                ProjectionName::Nonconvex => Projection::Nonconvex,
            },
            ucb_scale: self.ucb_scale,
            always_update,
            ..RsOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub algorithm: AlgorithmSpec,
    pub link: LinkName,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Batch budget; required by `bglincb`.
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_override: Option<f64>,
    /// Replaces the default confidence radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Replaces the default regularization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Number of sampled arm sets behind the kappa oracles.
    #[serde(default = "default_kappa_samples")]
    pub kappa_samples: usize,
    /// Scripted arm sets (header `d K T`); replaces the unit-ball generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms_file: Option<PathBuf>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
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

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn algorithms(&self) -> Vec<Algorithm> {
        self.algorithm.list()
    }

    /// Collects every violated constraint.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let algorithms = self.algorithms();
        if algorithms.is_empty() {
            errs.push("algorithm: at least one algorithm is required".to_string());
        }
        if self.d == 0 {
            errs.push("d: must be >= 1".to_string());
        }
        if self.k == 0 {
            errs.push("K: must be >= 1".to_string());
        }
        if self.horizon == 0 {
            errs.push("T: must be >= 1".to_string());
        }
        if !positive(self.s) {
            errs.push(format!("S: must be positive, got {}", self.s));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            errs.push(format!("delta: must lie in (0, 1), got {}", self.delta));
        }
        if self.seeds.is_empty() {
            errs.push("seeds: at least one seed is required".to_string());
        }
        if let Some(s) = self.seeds.iter().find(|&&s| s > i64::MAX as u64) {
            errs.push(format!("seeds: {s} exceeds the TOML integer range"));
        }
        if self.root_seed > i64::MAX as u64 {
            errs.push(format!("root_seed: {} exceeds the TOML integer range", self.root_seed));
        }
        if algorithms.contains(&Algorithm::Bglincb) {
            match self.m {
                None => errs.push("M: required by bglincb".to_string()),
                Some(m) if m < 2 => errs.push(format!("M: must be >= 2, got {m}")),
                _ => {}
            }
            if self.horizon < 4 {
                errs.push("T: bglincb needs T >= 4".to_string());
            }
        }
        if let Some(k) = self.kappa_override {
            if !(k >= 1.0 && k.is_finite()) {
                errs.push(format!("kappa_override: must be >= 1, got {k}"));
            }
        }
        if let Some(g) = self.gamma {
            if !positive(g) {
                errs.push(format!("gamma: must be positive, got {g}"));
            }
        }
        if let Some(l) = self.lambda {
            if !positive(l) {
                errs.push(format!("lambda: must be positive, got {l}"));
            }
        }
        if self.kappa_samples == 0 {
            errs.push("kappa_samples: must be >= 1".to_string());
        }
        let f = &self.flags;
        if !positive(f.criterion1_scale) {
            errs.push(format!("flags.criterion1_scale: must be positive, got {}", f.criterion1_scale));
        }
        if let Some(v) = f.criterion1_threshold {
            if !positive(v) {
                errs.push(format!("flags.criterion1_threshold: must be positive, got {v}"));
            }
        }
        if !(f.ucb_scale >= 0.0 && f.ucb_scale.is_finite()) {
            errs.push(format!("flags.ucb_scale: must be non-negative, got {}", f.ucb_scale));
        }
        if !positive(f.alpha) {
            errs.push(format!("flags.alpha: must be positive, got {}", f.alpha));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}
