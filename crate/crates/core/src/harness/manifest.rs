use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("episode {episode}: {reason}")]
    Invalid { episode: String, reason: String },
    #[error("episode {episode}: referenced file {path} does not exist")]
    Missing { episode: String, path: String },
    #[error("duplicate episode id {0}")]
    Duplicate(String),
    #[error("no episodes found in {0}")]
    Empty(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub trajectory: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_embedding: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_embedding: Option<PathBuf>,
}

/// One benchmark episode: ground truth plus generated samples and the
/// optional side files used by the scene and semantic scores.
///
/// Relative paths are resolved against the directory of the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeManifest {
    pub episode_id: String,
    pub task_id: String,
    #[serde(default)]
    pub instruction: String,
    pub gt_trajectory: PathBuf,
    pub samples: Vec<SampleEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations: Option<PathBuf>,
}

impl EpisodeManifest {
    fn referenced(&self) -> Vec<&PathBuf> {
        let mut out = vec![&self.gt_trajectory];
        for s in &self.samples {
            out.push(&s.trajectory);
            out.extend(s.patch_embedding.iter());
            out.extend(s.global_embedding.iter());
        }
        out.extend(self.calibration.iter());
        out.extend(self.captions.iter());
        out.extend(self.violations.iter());
        out
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.gt_trajectory);
        for s in &mut self.samples {
            fix(&mut s.trajectory);
            s.patch_embedding.as_mut().map(fix);
            s.global_embedding.as_mut().map(fix);
        }
        self.calibration.as_mut().map(fix);
        self.captions.as_mut().map(fix);
        self.violations.as_mut().map(fix);
    }

    /// Structural checks plus existence of every referenced file.
    pub fn validate(&self) -> Result<(), ManifestError> {
        let invalid = |reason: &str| ManifestError::Invalid {
            episode: self.episode_id.clone(),
            reason: reason.to_string(),
        };
        if self.episode_id.is_empty() {
            return Err(invalid("empty episode_id"));
        }
        if self.task_id.is_empty() {
            return Err(invalid("empty task_id"));
        }
        if self.samples.is_empty() {
            return Err(invalid("at least one sample is required"));
        }
        for p in self.referenced() {
            if !p.is_file() {
                return Err(ManifestError::Missing {
                    episode: self.episode_id.clone(),
                    path: p.display().to_string(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(Box<EpisodeManifest>),
    Many(Vec<EpisodeManifest>),
}

fn read_file(path: &Path) -> Result<Vec<EpisodeManifest>, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let parsed: OneOrMany = serde_json::from_str(&text).map_err(|source| ManifestError::Json {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut list = match parsed {
        OneOrMany::One(m) => vec![*m],
        OneOrMany::Many(v) => v,
    };
    for m in &mut list {
        m.resolve(base);
    }
    Ok(list)
}

/// Load manifests from a JSON file (one object or an array) or from every
/// `*.json` file of a directory, in file-name order. All episodes are
/// validated and ids must be unique.
pub fn load_manifests(path: &Path) -> Result<Vec<EpisodeManifest>, ManifestError> {
    let io_err = |source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut all = Vec::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            all.extend(read_file(&f)?);
        }
    } else {
        all = read_file(path)?;
    }
    if all.is_empty() {
        return Err(ManifestError::Empty(path.display().to_string()));
    }
    let mut seen = BTreeSet::new();
    for m in &all {
        m.validate()?;
        if !seen.insert(m.episode_id.clone()) {
            return Err(ManifestError::Duplicate(m.episode_id.clone()));
        }
    }
    Ok(all)
}
