use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotations::{load_annotations, write_annotations};
use super::features::{load_features, write_features};
use super::synth::{synth_generate, SynthConfig};
use crate::error::{Error, Result};
use crate::numkit::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths are relative to the manifest's directory.
    pub features: PathBuf,
    pub annotations: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub n_phases: usize,
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SynthConfig>,
    pub videos: Vec<ManifestEntry>,
}

/// A labelled video held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub features: Tensor,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n_phases: usize,
    pub feature_dim: usize,
    pub videos: Vec<Video>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Splits off the last `n` videos.
    pub fn split_tail(mut self, n: usize) -> (Dataset, Dataset) {
        let tail = self.videos.split_off(self.videos.len().saturating_sub(n));
        let test = Dataset { n_phases: self.n_phases, feature_dim: self.feature_dim, videos: tail };
        (self, test)
    }
}

pub fn synth_dataset(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    let videos = synth_generate(config, seed)?
        .into_iter()
        .map(|(f, p)| Video { id: f.video_id, features: f.features, labels: p.labels })
        .collect();
    Ok(Dataset { n_phases: config.n_phases, feature_dim: config.feature_dim, videos })
}

/// Generates a synthetic dataset and writes features, annotations and the
/// manifest under `dir`.
pub fn write_synth_dataset(dir: impl AsRef<Path>, config: &SynthConfig, seed: u64) -> Result<Manifest> {
    let dir = dir.as_ref();
    let data = synth_dataset(config, seed)?;
    for sub in ["features", "annotations"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut videos = Vec::with_capacity(data.len());
    for v in &data.videos {
        let entry = ManifestEntry {
            id: v.id.clone(),
            features: PathBuf::from("features").join(format!("{}.srft", v.id)),
            annotations: PathBuf::from("annotations").join(format!("{}.csv", v.id)),
        };
        write_features(dir.join(&entry.features), &v.features)?;
        write_annotations(dir.join(&entry.annotations), &v.labels)?;
        videos.push(entry);
    }
    let manifest = Manifest {
        n_phases: config.n_phases,
        feature_dim: config.feature_dim,
        seed: Some(seed),
        generator: Some(config.clone()),
        videos,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Accepts either a manifest file or a directory containing one.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(MANIFEST_FILE);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for entry in &manifest.videos {
        let f = load_features(root.join(&entry.features))?;
        let mut a = load_annotations(root.join(&entry.annotations))?;
        a.video_id = entry.id.clone();
        a.check_phases(manifest.n_phases)?;
        if f.len() != a.len() {
            return Err(Error::shape(format!(
                "{}: {} feature rows but {} labelled frames",
                entry.id,
                f.len(),
                a.len()
            )));
        }
        if f.dim() != manifest.feature_dim {
            return Err(Error::shape(format!(
                "{}: feature dim {} but manifest says {}",
                entry.id,
                f.dim(),
                manifest.feature_dim
            )));
        }
        videos.push(Video { id: entry.id.clone(), features: f.features, labels: a.labels });
    }
    Ok(Dataset { n_phases: manifest.n_phases, feature_dim: manifest.feature_dim, videos })
}
