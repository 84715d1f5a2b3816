//! Pipeline configuration, stored as TOML.
//!
//! Every field has a compiled-in default, so an empty file is a valid
//! configuration. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::SizeFilter;
use crate::pointlabel::DEFAULT_IGNORE_SIZE;
use crate::tracker::TrackerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize configuration: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Coordinate frame in which boxes are tracked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameMode {
    /// Ego-motion compensated through the sequence poses.
    #[default]
    World,
    /// Raw sensor coordinates.
    Ego,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    /// Untracked instances below this many points are cleared.
    pub ignore_size: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            ignore_size: DEFAULT_IGNORE_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeFilterSetting {
    #[default]
    PerFrame,
    PerTube,
}

impl From<SizeFilterSetting> for SizeFilter {
    fn from(s: SizeFilterSetting) -> Self {
        match s {
            SizeFilterSetting::PerFrame => SizeFilter::PerFrame,
            SizeFilterSetting::PerTube => SizeFilter::PerTube,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub min_points: Vec<usize>,
    pub size_filter: SizeFilterSetting,
    /// Minimum box IoU for matching a track to a ground-truth object when
    /// counting identity switches.
    pub identity_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            min_points: vec![1, 50],
            size_filter: SizeFilterSetting::PerFrame,
            identity_iou: 0.25,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub frame_mode: FrameMode,
    pub tracker: TrackerConfig,
    pub stage2: Stage2Config,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        fs::write(path, self.to_toml()?).map_err(|source| ConfigError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tracker
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.eval.min_points.contains(&0) {
            return Err(ConfigError::Invalid("eval.min_points entries must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.identity_iou) {
            return Err(ConfigError::Invalid(format!(
                "eval.identity_iou {} outside [0, 1]",
                self.eval.identity_iou
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MatchingMetric;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.tracker.ablation.matching_metric = MatchingMetric::Giou;
        cfg.frame_mode = FrameMode::Ego;
        cfg.eval.min_points = vec![1, 10, 50];
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_override() {
        let cfg = PipelineConfig::from_toml("[tracker.bikes]\ndet_split_threshold = 0.5\nhigh_match_threshold = -0.4\nlow_match_threshold = -0.7\nmin_hits = 3\nmax_age = 4\ndeath_age = 7\n").unwrap();
        assert_eq!(cfg.tracker.bikes.det_split_threshold, 0.5);
        assert_eq!(cfg.tracker.vehicles.min_hits, 2);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(PipelineConfig::from_toml("bogus = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            PipelineConfig::from_toml("[eval]\nmin_points = [0]"),
            Err(ConfigError::Invalid(_))
        ));
    }
}
