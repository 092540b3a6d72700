//! Flat `key = value` configuration with dotted sections.
//!
//! Blank lines and text after `#` are ignored. Every key is optional; see
//! [`KEYS`] for the full list and defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use invres_core::autodiff::StoragePolicy;
use invres_core::data::SamplingStrategy;
use invres_core::losses::{LossWeights, Reduction};
use invres_core::models::ModelSpec;
use invres_core::optim::AdamConfig;
use invres_core::Precision;

use crate::error::{Error, Result};

/// Which losses drive the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Cross-entropy, Dice, reconstruction and KL terms on all parameters.
    Full,
    /// Reconstruction and KL terms only, updating only the VAE branch.
    VaeOnly,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Full => "full",
            Objective::VaeOnly => "vae-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub adam: AdamConfig,
    pub steps: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub l2_reduction: Reduction,
    pub precision: Precision,
    pub policy: StoragePolicy,
    pub sampling: SamplingStrategy,
    pub objective: Objective,
    /// Save a checkpoint every this many steps (0: only the final one).
    pub checkpoint_every: usize,
    /// Trailing volumes of the dataset kept out of training.
    pub holdout: usize,
    /// Worker threads for evaluation.
    pub threads: usize,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelSpec::default(),
            adam: AdamConfig::default(),
            steps: 1000,
            seed: 0,
            weights: LossWeights::default(),
            l2_reduction: Reduction::Mean,
            precision: Precision::F32,
            policy: StoragePolicy::Invertible,
            sampling: SamplingStrategy::ClassBalanced,
            objective: Objective::Full,
            checkpoint_every: 0,
            holdout: 1,
            threads: 1,
            data_dir: None,
            out_dir: None,
        }
    }
}

/// Every recognised key with its default and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("model.arch", "fully-invres", "baseline | partially-invres | fully-invres"),
    ("model.in_channels", "2", "input modalities"),
    ("model.num_classes", "3", "segmentation classes including background"),
    ("model.levels", "4", "resolutions including the bottom one"),
    ("model.base_width", "16", "channels at the finest level (even)"),
    ("model.blocks_per_level", "2", "blocks per encoder and decoder level"),
    ("model.coupling_depth", "1", "conv/norm/act repeats inside each coupling subnet"),
    ("model.vae", "true", "attach the VAE reconstruction branch"),
    ("model.latent_dim", "64", "VAE latent size"),
    ("model.patch", "32", "patch extent, one value or D,H,W"),
    ("model.batch", "1", "patches per step"),
    ("model.seed", "0", "parameter initialization seed"),
    ("train.lr", "2e-4", "Adam learning rate"),
    ("train.beta1", "0.9", "Adam first-moment decay"),
    ("train.beta2", "0.999", "Adam second-moment decay"),
    ("train.eps", "1e-8", "Adam denominator offset"),
    ("train.steps", "1000", "optimizer steps"),
    ("train.seed", "0", "patch sampling and VAE noise seed"),
    ("train.precision", "f32", "f32 | f64"),
    ("train.policy", "invertible", "store | invertible | checkpoint"),
    ("train.checkpoint_segment", "0", "nodes per checkpoint segment (0: ceil(sqrt(nodes)))"),
    ("train.sampling", "balanced", "uniform | balanced"),
    ("train.objective", "full", "full | vae-only"),
    ("train.checkpoint_every", "0", "checkpoint cadence in steps (0: final only)"),
    ("train.holdout", "1", "trailing volumes held out for evaluation"),
    ("train.threads", "1", "evaluation worker threads"),
    ("loss.ce", "1", "cross-entropy weight"),
    ("loss.dice", "1", "Dice loss weight"),
    ("loss.l2", "0.1", "reconstruction weight"),
    ("loss.kl", "0.1", "KL weight"),
    ("loss.l2_reduction", "mean", "mean | sum"),
    ("data.dir", "", "dataset directory (manifest.json)"),
    ("output.dir", "", "directory for checkpoints and reports"),
];

fn parse_value<V: FromStr>(line: usize, key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| Error::Config { line, reason: format!("`{key}`: cannot parse `{value}`") })
}

fn parse_with<V, E: std::fmt::Display>(line: usize, key: &str, r: std::result::Result<V, E>) -> Result<V> {
    r.map_err(|e| Error::Config { line, reason: format!("`{key}`: {e}") })
}

fn parse_patch(line: usize, value: &str) -> Result<[usize; 3]> {
    let parts =
        value.split(',').map(|p| parse_value::<usize>(line, "model.patch", p.trim())).collect::<Result<Vec<_>>>()?;
    match parts.as_slice() {
        [e] => Ok([*e; 3]),
        [d, h, w] => Ok([*d, *h, *w]),
        _ => Err(Error::Config { line, reason: format!("`model.patch`: expected 1 or 3 extents, got `{value}`") }),
    }
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config { line, reason: format!("`{key}`: expected true or false, got `{value}`") }),
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        let mut segment = 0usize;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config { line, reason: format!("expected `key = value`, got `{content}`") })?;
            let m = &mut c.model;
            match key {
                "model.arch" => m.arch = parse_with(line, key, value.parse())?,
                "model.in_channels" => m.in_channels = parse_value(line, key, value)?,
                "model.num_classes" => m.num_classes = parse_value(line, key, value)?,
                "model.levels" => m.levels = parse_value(line, key, value)?,
                "model.base_width" => m.base_width = parse_value(line, key, value)?,
                "model.blocks_per_level" => m.blocks_per_level = parse_value(line, key, value)?,
                "model.coupling_depth" => m.coupling_depth = parse_value(line, key, value)?,
                "model.vae" => m.vae = parse_bool(line, key, value)?,
                "model.latent_dim" => m.latent_dim = parse_value(line, key, value)?,
                "model.patch" => m.patch = parse_patch(line, value)?,
                "model.batch" => m.batch = parse_value(line, key, value)?,
                "model.seed" => m.seed = parse_value(line, key, value)?,
                "train.lr" => c.adam.lr = parse_value(line, key, value)?,
                "train.beta1" => c.adam.beta1 = parse_value(line, key, value)?,
                "train.beta2" => c.adam.beta2 = parse_value(line, key, value)?,
                "train.eps" => c.adam.eps = parse_value(line, key, value)?,
                "train.steps" => c.steps = parse_value(line, key, value)?,
                "train.seed" => c.seed = parse_value(line, key, value)?,
                "train.precision" => c.precision = parse_with(line, key, value.parse())?,
                "train.policy" => c.policy = parse_with(line, key, value.parse())?,
                "train.checkpoint_segment" => segment = parse_value(line, key, value)?,
                "train.sampling" => c.sampling = parse_with(line, key, value.parse())?,
                "train.objective" => {
                    c.objective = match value {
                        "full" => Objective::Full,
                        "vae-only" | "vae" => Objective::VaeOnly,
                        _ => {
                            return Err(Error::Config { line, reason: format!("`{key}`: unknown objective `{value}`") })
                        }
                    }
                }
                "train.checkpoint_every" => c.checkpoint_every = parse_value(line, key, value)?,
                "train.holdout" => c.holdout = parse_value(line, key, value)?,
                "train.threads" => c.threads = parse_value(line, key, value)?,
                "loss.ce" => c.weights.ce = parse_value(line, key, value)?,
                "loss.dice" => c.weights.dice = parse_value(line, key, value)?,
                "loss.l2" => c.weights.l2 = parse_value(line, key, value)?,
                "loss.kl" => c.weights.kl = parse_value(line, key, value)?,
                "loss.l2_reduction" => {
                    c.l2_reduction = match value {
                        "mean" => Reduction::Mean,
                        "sum" => Reduction::Sum,
                        _ => return Err(Error::Config { line, reason: format!("`{key}`: expected mean or sum") }),
                    }
                }
                "data.dir" => c.data_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
                "output.dir" => c.out_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
                _ => return Err(Error::Config { line, reason: format!("unknown key `{key}`") }),
            }
        }
        if let StoragePolicy::Checkpoint { segment_len } = &mut c.policy {
            *segment_len = (segment > 0).then_some(segment);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::ConfigNotFound(path.to_path_buf()),
            _ => Error::Io { path: path.to_path_buf(), source: e },
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Config { line: 0, reason });
        if self.steps == 0 {
            return bad("train.steps must be at least 1".into());
        }
        if self.threads == 0 {
            return bad("train.threads must be at least 1".into());
        }
        if self.objective == Objective::VaeOnly && !self.model.vae {
            return bad("train.objective = vae-only needs model.vae = true".into());
        }
        self.model.validate().map_err(|e| Error::Config { line: 0, reason: e.to_string() })?;
        self.adam.validate().map_err(|e| Error::Config { line: 0, reason: e.to_string() })?;
        self.weights.validate().map_err(|e| Error::Config { line: 0, reason: e.to_string() })
    }

    /// Renders every key; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("model.arch", m.arch.name().into());
        kv("model.in_channels", m.in_channels.to_string());
        kv("model.num_classes", m.num_classes.to_string());
        kv("model.levels", m.levels.to_string());
        kv("model.base_width", m.base_width.to_string());
        kv("model.blocks_per_level", m.blocks_per_level.to_string());
        kv("model.coupling_depth", m.coupling_depth.to_string());
        kv("model.vae", m.vae.to_string());
        kv("model.latent_dim", m.latent_dim.to_string());
        kv("model.patch", format!("{},{},{}", m.patch[0], m.patch[1], m.patch[2]));
        kv("model.batch", m.batch.to_string());
        kv("model.seed", m.seed.to_string());
        kv("train.lr", format!("{:e}", self.adam.lr));
        kv("train.beta1", self.adam.beta1.to_string());
        kv("train.beta2", self.adam.beta2.to_string());
        kv("train.eps", format!("{:e}", self.adam.eps));
        kv("train.steps", self.steps.to_string());
        kv("train.seed", self.seed.to_string());
        kv("train.precision", if self.precision == Precision::F32 { "f32" } else { "f64" }.into());
        kv("train.policy", self.policy.name().into());
        let segment = match self.policy {
            StoragePolicy::Checkpoint { segment_len: Some(n) } => n,
            _ => 0,
        };
        kv("train.checkpoint_segment", segment.to_string());
        let sampling = match self.sampling {
            SamplingStrategy::Uniform => "uniform",
            SamplingStrategy::ClassBalanced => "balanced",
        };
        kv("train.sampling", sampling.into());
        kv("train.objective", self.objective.name().into());
        kv("train.checkpoint_every", self.checkpoint_every.to_string());
        kv("train.holdout", self.holdout.to_string());
        kv("train.threads", self.threads.to_string());
        kv("loss.ce", self.weights.ce.to_string());
        kv("loss.dice", self.weights.dice.to_string());
        kv("loss.l2", self.weights.l2.to_string());
        kv("loss.kl", self.weights.kl.to_string());
        kv("loss.l2_reduction", if self.l2_reduction == Reduction::Mean { "mean" } else { "sum" }.into());
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        kv("data.dir", path(&self.data_dir));
        kv("output.dir", path(&self.out_dir));
        s
    }
}
