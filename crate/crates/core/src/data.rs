//! Synthetic labelled volumes and patch sampling.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SeededRng;
use crate::{Error, Result, Scalar, Tensor};

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Multi-modality intensity volume `[C, D, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub id: String,
    pub data: Tensor<f32>,
    /// Voxel size in mm, `[D, H, W]` order.
    pub spacing: [f32; 3],
}

impl Volume {
    pub fn new(id: impl Into<String>, data: Tensor<f32>, spacing: [f32; 3]) -> Result<Self> {
        if data.rank() != 4 {
            return Err(Error::arg("Volume", format!("expected [C, D, H, W], got {:?}", data.shape())));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::arg("Volume", format!("spacing {spacing:?} must be positive")));
        }
        Ok(Volume { id: id.into(), data, spacing })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn extent(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[1], s[2], s[3]]
    }

    /// `[1, C, D, H, W]` input tensor in precision `T`.
    pub fn as_batch<T: Scalar>(&self) -> Tensor<T> {
        let mut shape = vec![1];
        shape.extend_from_slice(self.data.shape());
        Tensor::from_parts(shape, self.data.data().iter().map(|&v| T::from_f64(v as f64)).collect())
    }
}

/// Integer labels `[D, H, W]` with values in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    pub id: String,
    pub shape: [usize; 3],
    pub labels: Vec<u8>,
    pub num_classes: usize,
}

impl LabelVolume {
    pub fn new(id: impl Into<String>, shape: [usize; 3], labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        if labels.len() != shape.iter().product::<usize>() {
            return Err(Error::arg("LabelVolume", format!("{} labels do not fill {shape:?}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::arg("LabelVolume", format!("label {bad} outside {num_classes} classes")));
        }
        Ok(LabelVolume { id: id.into(), shape, labels, num_classes })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub num_volumes: usize,
    pub size: [usize; 3],
    pub num_classes: usize,
    pub num_modalities: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sigma: f64,
    /// Peak relative amplitude of the multiplicative bias field (0 disables it).
    pub bias_strength: f64,
    pub spacing: [f32; 3],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            num_volumes: 4,
            size: [32, 32, 32],
            num_classes: 3,
            num_modalities: 2,
            noise_sigma: 0.15,
            bias_strength: 0.1,
            spacing: [1.0; 3],
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::arg("generate_synthetic", r));
        if self.size.iter().any(|&e| e < 16) {
            return bad(format!("every extent must be at least 16, got {:?}", self.size));
        }
        if !(2..=255).contains(&self.num_classes) {
            return bad(format!("need 2..=255 classes, got {}", self.num_classes));
        }
        if self.num_modalities == 0 || self.num_volumes == 0 {
            return bad("need at least one modality and one volume".into());
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 || !(0.0..1.0).contains(&self.bias_strength) {
            return bad(format!("noise {} / bias {} out of range", self.noise_sigma, self.bias_strength));
        }
        Ok(())
    }

    /// Noise-free intensity of `class` in `modality`. Each modality orders
    /// the classes differently, so no single channel separates all of them.
    pub fn base_intensity(&self, class: usize, modality: usize) -> f64 {
        let k = self.num_classes;
        ((class + modality) % k) as f64 / (k - 1) as f64
    }
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
    wobble: [f64; 3],
    phase: [f64; 3],
}

impl Ellipsoid {
    fn random(rng: &mut SeededRng, size: [usize; 3]) -> Self {
        let mut e = Ellipsoid { center: [0.0; 3], radii: [0.0; 3], wobble: [0.0; 3], phase: [0.0; 3] };
        for (a, &extent) in size.iter().enumerate() {
            let n = extent as f64;
            e.center[a] = rng.uniform_in(0.3, 0.7) * n;
            e.radii[a] = rng.uniform_in(0.15, 0.3) * n;
            e.wobble[a] = rng.uniform_in(0.0, 0.15);
            e.phase[a] = rng.uniform_in(0.0, core::f64::consts::TAU);
        }
        e
    }

    /// Smoothly perturbed ellipsoid membership.
    fn contains(&self, p: [f64; 3]) -> bool {
        let mut r = 0.0;
        let mut angle = 0.0;
        for ((x, c), radius) in p.iter().zip(&self.center).zip(&self.radii) {
            let d = (x - c) / radius;
            r += d * d;
            angle += d;
        }
        let bump: f64 = (0..3).map(|a| self.wobble[a] * (angle * (a + 1) as f64 + self.phase[a]).sin()).sum();
        r <= (1.0 + bump).powi(2)
    }
}

/// Low-frequency multiplicative field in `[1 − s, 1 + s]`.
fn bias_field(rng: &mut SeededRng, size: [usize; 3], strength: f64) -> Vec<f64> {
    let phases: Vec<f64> = (0..3).map(|_| rng.uniform_in(0.0, core::f64::consts::TAU)).collect();
    let mut out = Vec::with_capacity(size.iter().product());
    for z in 0..size[0] {
        for y in 0..size[1] {
            for x in 0..size[2] {
                let c = [z, y, x];
                let s: f64 = (0..3)
                    .map(|a| (core::f64::consts::PI * c[a] as f64 / size[a] as f64 + phases[a]).cos())
                    .sum::<f64>()
                    / 3.0;
                out.push(1.0 + strength * s);
            }
        }
    }
    out
}

/// Smallest fraction of the volume every class must occupy.
const MIN_CLASS_FRACTION: f64 = 0.02;

fn synthetic_labels(rng: &mut SeededRng, cfg: &SyntheticConfig) -> Vec<u8> {
    let [d, h, w] = cfg.size;
    let total = d * h * w;
    let mut labels = vec![0u8; total];
    for _attempt in 0..64 {
        labels.iter_mut().for_each(|l| *l = 0);
        for class in 1..cfg.num_classes {
            let e = Ellipsoid::random(rng, cfg.size);
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        if e.contains([z as f64 + 0.5, y as f64 + 0.5, x as f64 + 0.5]) {
                            labels[(z * h + y) * w + x] = class as u8;
                        }
                    }
                }
            }
        }
        let mut counts = vec![0usize; cfg.num_classes];
        labels.iter().for_each(|&l| counts[l as usize] += 1);
        if counts.iter().all(|&c| c as f64 >= MIN_CLASS_FRACTION * total as f64) {
            break;
        }
    }
    labels
}

/// Deterministic synthetic dataset: class 0 background plus one smooth
/// ellipsoidal region per foreground class, rendered per modality as
/// class intensity × bias field + Gaussian noise.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<(Volume, LabelVolume)>> {
    cfg.validate()?;
    let vox: usize = cfg.size.iter().product();
    (0..cfg.num_volumes)
        .map(|i| {
            let id = format!("vol{i:03}");
            let mut rng = SeededRng::derive(cfg.seed, &id);
            let labels = synthetic_labels(&mut rng, cfg);
            let mut data = Vec::with_capacity(cfg.num_modalities * vox);
            for m in 0..cfg.num_modalities {
                let field = if cfg.bias_strength > 0.0 {
                    bias_field(&mut rng, cfg.size, cfg.bias_strength)
                } else {
                    vec![1.0; vox]
                };
                for (&l, &b) in labels.iter().zip(&field) {
                    let noise = if cfg.noise_sigma > 0.0 { cfg.noise_sigma * rng.normal() } else { 0.0 };
                    data.push((cfg.base_intensity(l as usize, m) * b + noise) as f32);
                }
            }
            let [d, h, w] = cfg.size;
            let tensor = Tensor::new(&[cfg.num_modalities, d, h, w], data)?;
            Ok((
                Volume::new(id.clone(), tensor, cfg.spacing)?,
                LabelVolume::new(id, cfg.size, labels, cfg.num_classes)?,
            ))
        })
        .collect()
}

/// Overlap coefficient `Σ min(p, q)` of class-conditional intensity
/// histograms, averaged over class pairs and modalities. 0 means perfectly
/// separable by intensity alone, 1 means indistinguishable.
pub fn histogram_overlap(data: &[(Volume, LabelVolume)], bins: usize) -> f64 {
    let Some((first, labels0)) = data.first() else { return 0.0 };
    let (channels, classes) = (first.channels(), labels0.num_classes);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for m in 0..channels {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (v, _) in data {
            let vox = v.data.len() / v.channels();
            for &x in &v.data.data()[m * vox..(m + 1) * vox] {
                lo = lo.min(x as f64);
                hi = hi.max(x as f64);
            }
        }
        let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
        let mut hist = vec![vec![0.0f64; bins]; classes];
        for (v, l) in data {
            let vox = v.data.len() / v.channels();
            for (&x, &c) in v.data.data()[m * vox..(m + 1) * vox].iter().zip(&l.labels) {
                let b = (((x as f64 - lo) / width) as usize).min(bins - 1);
                hist[c as usize][b] += 1.0;
            }
        }
        for h in &mut hist {
            let s: f64 = h.iter().sum();
            if s > 0.0 {
                h.iter_mut().for_each(|v| *v /= s);
            }
        }
        for a in 0..classes {
            for b in a + 1..classes {
                total += hist[a].iter().zip(&hist[b]).map(|(p, q)| p.min(*q)).sum::<f64>();
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    Uniform,
    /// Pick a class uniformly among those present, then a voxel of that
    /// class, and centre the patch on it.
    ClassBalanced,
}

impl core::str::FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplingStrategy::Uniform),
            "balanced" | "class-balanced" => Ok(SamplingStrategy::ClassBalanced),
            other => Err(Error::arg("SamplingStrategy", format!("unknown strategy `{other}`"))),
        }
    }
}

/// A cropped training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub origin: [usize; 3],
    /// `[C, p, p, p]` intensities.
    pub image: Tensor<f32>,
    /// `p³` labels in row-major order.
    pub labels: Vec<u8>,
}

/// Deterministic random cropper.
#[derive(Debug, Clone)]
pub struct PatchSampler {
    pub patch: [usize; 3],
    pub strategy: SamplingStrategy,
    rng: SeededRng,
}

impl PatchSampler {
    pub fn new(patch: [usize; 3], seed: u64, strategy: SamplingStrategy) -> Self {
        PatchSampler { patch, strategy, rng: SeededRng::derive(seed, "patch-sampler") }
    }

    fn check(&self, extent: [usize; 3]) -> Result<()> {
        if self.patch.iter().zip(&extent).any(|(p, e)| *p == 0 || p > e) {
            return Err(Error::arg("sample_patches", format!("patch {:?} does not fit volume {extent:?}", self.patch)));
        }
        Ok(())
    }

    /// Patch origins for `n` draws on `labels`.
    pub fn origins(&mut self, labels: &LabelVolume, n: usize) -> Result<Vec<[usize; 3]>> {
        let extent = labels.shape;
        self.check(extent)?;
        let p = self.patch;
        let max_origin = [extent[0] - p[0], extent[1] - p[1], extent[2] - p[2]];
        match self.strategy {
            SamplingStrategy::Uniform => {
                Ok((0..n).map(|_| core::array::from_fn(|a| self.rng.below(max_origin[a] + 1))).collect())
            }
            SamplingStrategy::ClassBalanced => {
                let [_, h, w] = extent;
                let coord = |i: usize| [i / (h * w), (i / w) % h, i % w];
                let fits = |c: [usize; 3]| (0..3).all(|a| c[a] >= p[a] / 2 && c[a] - p[a] / 2 <= max_origin[a]);
                // voxels of each class whose centred patch fits, else all voxels of that class
                let mut fitting = vec![Vec::new(); labels.num_classes];
                let mut any = vec![Vec::new(); labels.num_classes];
                for (i, &l) in labels.labels.iter().enumerate() {
                    any[l as usize].push(i);
                    if fits(coord(i)) {
                        fitting[l as usize].push(i);
                    }
                }
                let present: Vec<usize> = (0..labels.num_classes).filter(|&c| !any[c].is_empty()).collect();
                Ok((0..n)
                    .map(|_| {
                        let class = present[self.rng.below(present.len())];
                        let pool = if fitting[class].is_empty() { &any[class] } else { &fitting[class] };
                        let c = coord(pool[self.rng.below(pool.len())]);
                        core::array::from_fn(|a| c[a].saturating_sub(p[a] / 2).min(max_origin[a]))
                    })
                    .collect())
            }
        }
    }

    pub fn sample_patches(&mut self, volume: &Volume, labels: &LabelVolume, n: usize) -> Result<Vec<Patch>> {
        if volume.extent() != labels.shape {
            return Err(Error::ShapeMismatch { left: volume.extent().to_vec(), right: labels.shape.to_vec() });
        }
        let origins = self.origins(labels, n)?;
        origins.into_iter().map(|o| crop(volume, labels, o, self.patch)).collect()
    }
}

/// Exact sub-volume copy at `origin`.
pub fn crop(volume: &Volume, labels: &LabelVolume, origin: [usize; 3], patch: [usize; 3]) -> Result<Patch> {
    let [d, h, w] = volume.extent();
    if (0..3).any(|a| origin[a] + patch[a] > volume.extent()[a]) {
        return Err(Error::arg("crop", format!("patch {patch:?} at {origin:?} exceeds {:?}", volume.extent())));
    }
    let c = volume.channels();
    let [pd, ph, pw] = patch;
    let mut image = Vec::with_capacity(c * pd * ph * pw);
    let mut lab = Vec::with_capacity(pd * ph * pw);
    for ch in 0..c {
        for z in 0..pd {
            for y in 0..ph {
                let row = ((ch * d + origin[0] + z) * h + origin[1] + y) * w + origin[2];
                image.extend_from_slice(&volume.data.data()[row..row + pw]);
                if ch == 0 {
                    let lrow = ((origin[0] + z) * h + origin[1] + y) * w + origin[2];
                    lab.extend_from_slice(&labels.labels[lrow..lrow + pw]);
                }
            }
        }
    }
    Ok(Patch { origin, image: Tensor::new(&[c, pd, ph, pw], image)?, labels: lab })
}

/// Class of the patch centre voxel.
pub fn center_class(patch: &Patch) -> u8 {
    let s = patch.image.shape();
    let (d, h, w) = (s[1], s[2], s[3]);
    patch.labels[((d / 2) * h + h / 2) * w + w / 2]
}
