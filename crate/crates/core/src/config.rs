//! Run configuration, read from a TOML document.
//!
//! ```toml
//! embedding_dim = 8
//!
//! [calibration]
//! bins = 10
//! gamma = 0.3
//!
//! [fusion]
//! alpha = 0.5
//! fit_alpha = false
//! grid_step = 0.01
//!
//! [deferral]
//! budget = 30
//! rank_source = "hidden_state"
//! classification_source = "combined"
//!
//! [train]
//! learning_rate = 0.5
//! epochs = 200
//! hidden_width = 64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CalibrationConfig;
use crate::dataset::DEFAULT_EMBEDDING_DIM;
use crate::deferral::DeferralRule;
use crate::hidden::TrainConfig;
use crate::model::Source;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub alpha: f64,
    /// Fit alpha on the validation split instead of using `alpha`.
    pub fit_alpha: bool,
    pub grid_step: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            fit_alpha: false,
            grid_step: 0.01,
        }
    }
}

/// Exactly one of `theta` and `budget` is used; `budget` wins when both are
/// given, and a budget of 30 applies when neither is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeferralConfig {
    pub theta: Option<f64>,
    pub budget: Option<usize>,
    pub rank_source: Source,
    pub classification_source: Source,
}

impl Default for DeferralConfig {
    fn default() -> Self {
        Self {
            theta: None,
            budget: None,
            rank_source: Source::HiddenState,
            classification_source: Source::Combined,
        }
    }
}

impl DeferralConfig {
    pub const DEFAULT_BUDGET: usize = 30;

    pub fn rule(&self) -> DeferralRule {
        match (self.budget, self.theta) {
            (Some(k), _) => DeferralRule::Budget(k),
            (None, Some(theta)) => DeferralRule::Threshold(theta),
            (None, None) => DeferralRule::Budget(Self::DEFAULT_BUDGET),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub embedding_dim: usize,
    pub calibration: CalibrationConfig,
    pub fusion: FusionConfig,
    pub deferral: DeferralConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            calibration: CalibrationConfig::default(),
            fusion: FusionConfig::default(),
            deferral: DeferralConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.calibration.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        if !(0.0..=1.0).contains(&self.fusion.alpha) {
            return Err(ConfigError::Invalid(format!("alpha {} outside [0, 1]", self.fusion.alpha)));
        }
        if !(self.fusion.grid_step > 0.0 && self.fusion.grid_step <= 0.5) {
            return Err(ConfigError::Invalid("grid_step must lie in (0, 0.5]".into()));
        }
        if let Some(theta) = self.deferral.theta {
            if !(0.0..=1.0).contains(&theta) {
                return Err(ConfigError::Invalid(format!("theta {theta} outside [0, 1]")));
            }
        }
        if self.embedding_dim == 0 {
            return Err(ConfigError::Invalid("embedding_dim must be positive".into()));
        }
        Ok(())
    }
}
