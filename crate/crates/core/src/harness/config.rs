use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::closed_loop::{DEFAULT_ACTION_HZ, DEFAULT_ACTION_STEPS, DEFAULT_VIDEO_FRAMES, DEFAULT_VIDEO_HZ};
use crate::curation::DEFAULT_CELL;
use crate::geo::{DynWeights, DEFAULT_EPSILON};
use crate::semantic::BLEU_MAX_ORDER;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("unsupported config version {0}")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How SA/TA/DYN are drawn from the generated samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSelection {
    /// Score only the sample with the lowest symmetric Hausdorff distance.
    #[default]
    Best,
    /// Average the scores of every sample.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoxelConfig {
    pub cell: f64,
}

impl Default for VoxelConfig {
    fn default() -> Self {
        VoxelConfig { cell: DEFAULT_CELL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BleuConfig {
    pub max_order: usize,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_order: BLEU_MAX_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkConfig {
    pub memory_frames: usize,
    pub video_frames: usize,
    pub video_hz: f64,
    pub action_steps: usize,
    pub action_hz: f64,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig {
            memory_frames: 4,
            video_frames: DEFAULT_VIDEO_FRAMES,
            video_hz: DEFAULT_VIDEO_HZ,
            action_steps: DEFAULT_ACTION_STEPS,
            action_hz: DEFAULT_ACTION_HZ,
        }
    }
}

/// Optional weighted mean of the three semantic sub-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticsWeights {
    pub bleu: f64,
    pub keystep: f64,
    pub logic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub version: u32,
    pub epsilon: f64,
    pub sample_selection: SampleSelection,
    #[serde(rename = "dyn")]
    pub dyn_weights: DynWeights,
    pub voxel: VoxelConfig,
    pub bleu: BleuConfig,
    pub chunks: ChunkConfig,
    pub semantics: Option<SemanticsWeights>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            version: CONFIG_VERSION,
            epsilon: DEFAULT_EPSILON,
            sample_selection: SampleSelection::Best,
            dyn_weights: DynWeights::default(),
            voxel: VoxelConfig::default(),
            bleu: BleuConfig::default(),
            chunks: ChunkConfig::default(),
            semantics: None,
        }
    }
}

impl EvalConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: EvalConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        EvalConfig::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("voxel.cell", self.voxel.cell)?;
        positive("chunks.video_hz", self.chunks.video_hz)?;
        positive("chunks.action_hz", self.chunks.action_hz)?;
        self.dyn_weights
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.bleu.max_order == 0 {
            return Err(ConfigError::Invalid("bleu.max_order must be at least 1".into()));
        }
        if self.chunks.memory_frames == 0 {
            return Err(ConfigError::Invalid("chunks.memory_frames must be at least 1".into()));
        }
        if let Some(w) = &self.semantics {
            let ws = [w.bleu, w.keystep, w.logic];
            if ws.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || ws.iter().sum::<f64>() <= 0.0 {
                return Err(ConfigError::Invalid(
                    "semantics weights must be non-negative with a positive sum".into(),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, so formatting and field order in
    /// the source file do not change the hash.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_file() {
        let cfg = EvalConfig::from_toml("", "<test>").unwrap();
        assert_eq!(cfg, EvalConfig::default());
        assert_eq!(cfg.dyn_weights.alpha, 0.007);
        assert_eq!(cfg.dyn_weights.beta, 0.003);
        assert_eq!(cfg.epsilon, 1e-8);
    }

    #[test]
    fn partial_override_and_hash() {
        let a = EvalConfig::from_toml("version = 1\n[voxel]\ncell = 0.1\n", "a").unwrap();
        let b = EvalConfig::from_toml("[voxel]\ncell    =    0.1   # same\n", "b").unwrap();
        assert_eq!(a.voxel.cell, 0.1);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), EvalConfig::default().hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(
            EvalConfig::from_toml("version = 2", "x"),
            Err(ConfigError::Version(2))
        ));
        assert!(EvalConfig::from_toml("epsilon = 0.0", "x").is_err());
        assert!(EvalConfig::from_toml("[dyn]\nalpha = -1.0\nbeta = 0.1\nepsilon = 1e-8", "x").is_err());
        assert!(EvalConfig::from_toml("unknown = 1", "x").is_err());
        assert!(EvalConfig::from_toml("[semantics]\nbleu = 0\nkeystep = 0\nlogic = 0", "x").is_err());
        let ok = EvalConfig::from_toml(
            "sample_selection = \"mean\"\n[semantics]\nbleu = 1\nkeystep = 1\nlogic = 2",
            "x",
        )
        .unwrap();
        assert_eq!(ok.sample_selection, SampleSelection::Mean);
    }
}
