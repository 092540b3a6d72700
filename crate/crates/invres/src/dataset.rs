//! Synthetic datasets on disk: one `.ivl` image and one `.ivl` label map per
//! volume plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use invres_core::data::{generate_synthetic, histogram_overlap, LabelVolume, SyntheticConfig, Volume};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{read_labels, read_volume, write_labels, write_volume};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Histogram bins used for the recorded difficulty.
pub const OVERLAP_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub seed: u64,
    pub num_volumes: usize,
    pub size: [usize; 3],
    pub num_classes: usize,
    pub num_modalities: usize,
    pub noise_sigma: f64,
    pub bias_strength: f64,
    pub spacing: [f32; 3],
}

impl From<&SyntheticConfig> for GeneratorParams {
    fn from(c: &SyntheticConfig) -> Self {
        GeneratorParams {
            seed: c.seed,
            num_volumes: c.num_volumes,
            size: c.size,
            num_classes: c.num_classes,
            num_modalities: c.num_modalities,
            noise_sigma: c.noise_sigma,
            bias_strength: c.bias_strength,
            spacing: c.spacing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeEntry {
    pub id: String,
    pub image: String,
    pub labels: String,
    pub class_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: GeneratorParams,
    /// Mean pairwise overlap of class-conditional intensity histograms.
    pub histogram_overlap: f64,
    pub volumes: Vec<VolumeEntry>,
}

pub type Dataset = Vec<(Volume, LabelVolume)>;

/// Generates a dataset and writes it with its manifest under `dir`.
pub fn write_synthetic(dir: &Path, cfg: &SyntheticConfig) -> Result<Manifest> {
    let data = generate_synthetic(cfg)?;
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut volumes = Vec::with_capacity(data.len());
    for (v, l) in &data {
        let image = format!("{}.ivl", v.id);
        let labels = format!("{}_labels.ivl", v.id);
        write_volume(&dir.join(&image), v)?;
        write_labels(&dir.join(&labels), l, v.spacing)?;
        volumes.push(VolumeEntry { id: v.id.clone(), image, labels, class_counts: l.class_counts() });
    }
    let manifest =
        Manifest { generator: cfg.into(), histogram_overlap: histogram_overlap(&data, OVERLAP_BINS), volumes };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json { path: path.clone(), source })?;
    fs::write(&path, text).map_err(Error::io(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
}

/// Loads every volume listed in the manifest under `dir`.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Dataset)> {
    let manifest = read_manifest(dir)?;
    let k = manifest.generator.num_classes;
    let data = manifest
        .volumes
        .iter()
        .map(|e| {
            let v = read_volume(&dir.join(&e.image))?;
            let mut l = read_labels(&dir.join(&e.labels), k)?;
            l.id = e.id.clone();
            if v.extent() != l.shape {
                return Err(Error::Usage(format!("volume {} and its labels differ in shape", e.id)));
            }
            Ok((Volume { id: e.id.clone(), ..v }, l))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, data))
}

/// Checkpoint file name for `step`.
pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ckpt_{step}.ivparams"))
}
