//! Whole-volume inference by overlapping sliding windows, and per-class
//! Dice and Hausdorff scores.

use std::fmt;

use invres_core::data::{crop, LabelVolume, Volume};
use invres_core::metrics::{dice_score, hausdorff_distance, Mask};
use invres_core::models::Model;
use invres_core::{Scalar, Tensor};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub dice: f64,
    /// `None` when the prediction or the ground truth has no voxel of the class.
    pub hausdorff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeMetrics {
    pub id: String,
    pub classes: Vec<ClassMetrics>,
    /// Mean Dice over every class except background (class 0).
    pub mean_foreground_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub volumes: Vec<VolumeMetrics>,
    pub mean_foreground_dice: f64,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.volumes {
            write!(f, "{}:", v.id)?;
            for c in &v.classes {
                match c.hausdorff {
                    Some(h) => write!(f, " class{} dice={:.4} hd={:.3}", c.class, c.dice, h)?,
                    None => write!(f, " class{} dice={:.4} hd=undefined", c.class, c.dice)?,
                }
            }
            writeln!(f, " mean_fg_dice={:.4}", v.mean_foreground_dice)?;
        }
        write!(f, "mean_foreground_dice {:.4}", self.mean_foreground_dice)
    }
}

/// Window origins along one axis: stride `patch/2`, with the last window
/// aligned to the end of the axis.
pub fn window_starts(extent: usize, patch: usize) -> Vec<usize> {
    let stride = (patch / 2).max(1);
    let last = extent - patch;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

/// Averaged class probabilities `[K, D, H, W]` over all windows, flattened.
pub fn predict_probabilities<T: Scalar>(model: &Model<T>, volume: &Volume) -> Result<Vec<f64>> {
    let spec = model.spec();
    if spec.batch != 1 {
        return Err(Error::Usage(format!("sliding-window inference needs batch 1, model has {}", spec.batch)));
    }
    let extent = volume.extent();
    let p = spec.patch;
    if (0..3).any(|a| p[a] > extent[a]) {
        return Err(Error::Usage(format!("patch {p:?} exceeds volume {} of extent {extent:?}", volume.id)));
    }
    let starts: Vec<Vec<usize>> = (0..3).map(|a| window_starts(extent[a], p[a])).collect();
    let mut origins = Vec::new();
    for &z in &starts[0] {
        for &y in &starts[1] {
            for &x in &starts[2] {
                origins.push([z, y, x]);
            }
        }
    }
    // crop() needs labels; a blank label map of the right shape suffices
    let blank = LabelVolume::new(&volume.id, extent, vec![0; extent.iter().product()], 2)?;
    let windows = origins
        .par_iter()
        .map(|&o| {
            let patch = crop(volume, &blank, o, p)?;
            let mut shape = vec![1];
            shape.extend_from_slice(patch.image.shape());
            let image = Tensor::<T>::new(&shape, patch.image.data().iter().map(|&x| T::from_f64(x as f64)).collect())?;
            Ok(model.forward(image)?.probs)
        })
        .collect::<Result<Vec<_>>>()?;

    let k = spec.num_classes;
    let [d, h, w] = extent;
    let mut sum = vec![0.0; k * d * h * w];
    let mut count = vec![0u32; d * h * w];
    for (o, probs) in origins.iter().zip(&windows) {
        let pd = probs.data();
        for z in 0..p[0] {
            for y in 0..p[1] {
                for x in 0..p[2] {
                    let vox = ((o[0] + z) * h + o[1] + y) * w + o[2] + x;
                    let local = (z * p[1] + y) * p[2] + x;
                    count[vox] += 1;
                    for c in 0..k {
                        sum[c * d * h * w + vox] += pd[c * p[0] * p[1] * p[2] + local].as_f64();
                    }
                }
            }
        }
    }
    let n = d * h * w;
    for (i, s) in sum.iter_mut().enumerate() {
        *s /= count[i % n] as f64;
    }
    Ok(sum)
}

/// Per-voxel argmax of `[K, voxels]` probabilities; ties go to the lower class.
pub fn argmax_labels(probs: &[f64], classes: usize) -> Vec<u8> {
    let n = probs.len() / classes;
    (0..n)
        .map(|v| {
            let mut best = 0;
            for c in 1..classes {
                if probs[c * n + v] > probs[best * n + v] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Scores a predicted label map against the ground truth.
pub fn score_labels(prediction: &[u8], truth: &LabelVolume, spacing: [f32; 3]) -> Result<VolumeMetrics> {
    let sp = spacing.map(f64::from);
    let mut classes = Vec::with_capacity(truth.num_classes);
    for class in 0..truth.num_classes {
        let p = Mask::from_labels(prediction, truth.shape, class as u8)?;
        let t = Mask::from_labels(&truth.labels, truth.shape, class as u8)?;
        classes.push(ClassMetrics { class, dice: dice_score(&p, &t)?, hausdorff: hausdorff_distance(&p, &t, sp)? });
    }
    let fg = &classes[1..];
    let mean_foreground_dice = fg.iter().map(|c| c.dice).sum::<f64>() / fg.len() as f64;
    Ok(VolumeMetrics { id: truth.id.clone(), classes, mean_foreground_dice })
}

/// Segments and scores each volume using `threads` workers for the windows.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &[(Volume, LabelVolume)], threads: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Usage("no volumes to evaluate".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {threads} worker threads: {e}")))?;
    let volumes = data
        .iter()
        .map(|(v, l)| {
            let probs = pool.install(|| predict_probabilities(model, v))?;
            score_labels(&argmax_labels(&probs, model.spec().num_classes), l, v.spacing)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_foreground_dice = volumes.iter().map(|v| v.mean_foreground_dice).sum::<f64>() / volumes.len() as f64;
    Ok(EvalReport { volumes, mean_foreground_dice })
}
