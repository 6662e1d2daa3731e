//! Flat key/value run configuration.
//!
//! Values come from built-in defaults, then an optional TOML file, then
//! command-line flags. The resolved result is echoed into every run
//! directory as `config.toml`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sifid_core::baselines::NiqeConfig;
use sifid_core::correlation::{ClassifyRule, CorrelationMode};
use sifid_core::subjective::NormalizationMode;
use sifid_core::trainer::{LossSign, TrainConfig};
use sifid_core::{EncoderConfig, NoiseSpec};

use crate::io::{self, IoError};

/// Environment variable naming the default parent of run directories.
pub const RUN_ROOT_ENV: &str = "SIFID_RUN_ROOT";
pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub loss_sign: LossSign,
    pub input_side: usize,
    pub widths: Vec<usize>,
    pub feature_dim: usize,
    pub leaky_slope: f64,
    pub init_seed: u64,
    /// Side and stride of the tiles that form one image's FID sample set.
    pub tile: usize,
    pub stride: usize,
    pub correlation_mode: CorrelationMode,
    pub normalization: NormalizationMode,
    pub min_slope: f64,
    pub min_gain: f64,
    pub gain_tail: usize,
    pub niqe_patch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let train = TrainConfig::with_noise(sifid_core::augment::CATALOG[0]);
        let rule = ClassifyRule::default();
        Self {
            seed: 0,
            jobs: 1,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            loss_sign: train.loss_sign,
            input_side: enc.input_side,
            widths: enc.widths,
            feature_dim: enc.feature_dim,
            leaky_slope: enc.leaky_slope,
            init_seed: enc.init_seed,
            tile: 64,
            stride: 32,
            correlation_mode: CorrelationMode::PerGroup,
            normalization: NormalizationMode::PerCritic,
            min_slope: rule.min_slope,
            min_gain: rule.min_gain,
            gain_tail: rule.tail,
            niqe_patch_size: NiqeConfig::default().patch_size,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = io::read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.encoder().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train(sifid_core::augment::CATALOG[0])
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.tile == 0 || self.stride == 0 {
            return Err(ConfigError::Invalid("tile and stride must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(ConfigError::Invalid("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            input_side: self.input_side,
            widths: self.widths.clone(),
            leaky_slope: self.leaky_slope,
            feature_dim: self.feature_dim,
            init_seed: self.init_seed,
        }
    }

    pub fn train(&self, noise: NoiseSpec) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed: self.seed,
            noise,
            loss_sign: self.loss_sign,
        }
    }

    pub fn classify_rule(&self) -> ClassifyRule {
        ClassifyRule {
            min_slope: self.min_slope,
            min_gain: self.min_gain,
            tail: self.gain_tail,
        }
    }

    pub fn niqe(&self) -> NiqeConfig {
        NiqeConfig {
            patch_size: self.niqe_patch_size,
            ..NiqeConfig::default()
        }
    }

    /// Writes `config.toml` into `run_dir`.
    pub fn echo(&self, run_dir: &Path) -> Result<(), ConfigError> {
        Ok(io::write_bytes(&run_dir.join(CONFIG_ECHO), self.to_toml().as_bytes())?)
    }
}

/// `explicit`, else `$SIFID_RUN_ROOT/<command>`, else `runs/<command>`.
pub fn run_dir(explicit: Option<&Path>, command: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(command)
        }
    }
}
