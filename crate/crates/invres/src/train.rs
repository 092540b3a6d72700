//! The optimization loop: patch sampling, metered forward/backward under the
//! configured storage policy, loss assembly and Adam updates.

use std::path::{Path, PathBuf};
use std::time::Instant;

use invres_core::autodiff::{Context, Grads, MemoryReport, Tape};
use invres_core::data::{LabelVolume, PatchSampler, Volume};
use invres_core::losses::{cross_entropy_loss, dice_loss, kl_loss, l2_recon_loss, one_hot, total_loss, LossComponents};
use invres_core::models::Model;
use invres_core::optim::Adam;
use invres_core::rng::SeededRng;
use invres_core::{Scalar, Tensor};
use serde::Serialize;

use crate::config::{Objective, TrainConfig};
use crate::dataset::checkpoint_path;
use crate::error::{Error, Result};
use crate::evaluate::EvalReport;
use crate::format::save_params;

/// Loss values after the forward pass of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Objective actually optimized at this step.
    pub total: f64,
    pub ce: f64,
    pub dice: f64,
    pub l2: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemorySummary {
    pub peak_stored_scalars: usize,
    pub peak_bytes: usize,
    pub recompute_count: usize,
    pub per_layer: Vec<(String, usize)>,
}

impl From<&MemoryReport> for MemorySummary {
    fn from(r: &MemoryReport) -> Self {
        MemorySummary {
            peak_stored_scalars: r.peak_stored_scalars,
            peak_bytes: r.peak_bytes,
            recompute_count: r.recompute_count,
            per_layer: r.per_layer.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub arch: String,
    pub policy: String,
    pub steps: Vec<StepRecord>,
    /// Activation memory of a single training step.
    pub memory: MemorySummary,
    pub wall_seconds: f64,
    pub checkpoints: Vec<PathBuf>,
    /// Scores on held-out volumes, filled in by the caller.
    pub final_metrics: Option<EvalReport>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|r| r.total)
    }
}

/// Builds the model and optimizes it on `data`. Checkpoints are written to
/// `out_dir` when one is given.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    data: &[(Volume, LabelVolume)],
    out_dir: Option<&Path>,
) -> Result<(Model<T>, TrainReport)> {
    let model = Model::build(&cfg.model)?;
    train_from::<T>(cfg, model, data, out_dir)
}

/// Continues optimizing an existing model.
pub fn train_from<T: Scalar>(
    cfg: &TrainConfig,
    mut model: Model<T>,
    data: &[(Volume, LabelVolume)],
    out_dir: Option<&Path>,
) -> Result<(Model<T>, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("no training volumes".into()));
    }
    if let Some((v, _)) = data.iter().find(|(v, _)| v.channels() != cfg.model.in_channels) {
        return Err(Error::Usage(format!(
            "volume {} has {} channels but the model expects {}",
            v.id,
            v.channels(),
            cfg.model.in_channels
        )));
    }
    if let Some((_, l)) = data.iter().find(|(_, l)| l.num_classes != cfg.model.num_classes) {
        return Err(Error::Usage(format!(
            "volume {} has {} classes but the model predicts {}",
            l.id, l.num_classes, cfg.model.num_classes
        )));
    }
    let started = Instant::now();
    let mut adam = Adam::new(cfg.adam, model.params());
    let mut sampler = PatchSampler::new(cfg.model.patch, cfg.seed, cfg.sampling);
    let mut pick = SeededRng::derive(cfg.seed, "volume-choice");
    let mut noise = SeededRng::derive(cfg.seed, "vae-noise");
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut checkpoints = Vec::new();
    let mut memory = None;
    for step in 1..=cfg.steps {
        let (image, labels) = draw_batch::<T>(cfg, data, &mut sampler, &mut pick)?;
        let eps = model.sample_eps(&mut noise);
        let (record, grads, report) = step_grads(cfg, &model, image, &labels, eps)?;
        adam.step(model.params_mut(), &grads)?;
        memory.get_or_insert(report);
        steps.push(StepRecord { step, ..record });
        if let Some(dir) = out_dir {
            if step == cfg.steps || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
                let path = checkpoint_path(dir, step);
                save_params(&path, model.params())?;
                checkpoints.push(path);
            }
        }
    }
    let report = TrainReport {
        arch: cfg.model.arch.name().into(),
        policy: cfg.policy.name().into(),
        steps,
        memory: memory.as_ref().map(MemorySummary::from).expect("at least one step"),
        wall_seconds: started.elapsed().as_secs_f64(),
        checkpoints,
        final_metrics: None,
    };
    Ok((model, report))
}

/// `[B, C, p, p, p]` image batch and its flattened labels.
fn draw_batch<T: Scalar>(
    cfg: &TrainConfig,
    data: &[(Volume, LabelVolume)],
    sampler: &mut PatchSampler,
    pick: &mut SeededRng,
) -> Result<(Tensor<T>, Vec<u8>)> {
    let mut image = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..cfg.model.batch {
        let (v, l) = &data[pick.below(data.len())];
        let patch = sampler.sample_patches(v, l, 1)?.pop().expect("one patch");
        image.extend(patch.image.data().iter().map(|&x| T::from_f64(x as f64)));
        labels.extend_from_slice(&patch.labels);
    }
    Ok((Tensor::new(&cfg.model.input_shape(), image)?, labels))
}

/// One forward and backward pass. Returns the loss record (step 0), the
/// parameter gradients of the configured objective and the memory report.
pub fn step_grads<T: Scalar>(
    cfg: &TrainConfig,
    model: &Model<T>,
    image: Tensor<T>,
    labels: &[u8],
    eps: Option<Tensor<T>>,
) -> Result<(StepRecord, Grads<T>, MemoryReport)> {
    let spec = model.spec();
    let [d, h, w] = spec.patch;
    let target = one_hot::<T>(labels, &[spec.batch, d, h, w], spec.num_classes)?;
    let inputs = model.inputs(image.clone(), eps)?;
    let graph = model.graph();
    let mut cx = Context::new(model.params());
    let mut tape = Tape::new(graph, cfg.policy);
    let outputs = tape.forward(graph, &mut cx, inputs)?;
    let out = Model::split_outputs(outputs);

    let wts = cfg.weights;
    let full = cfg.objective == Objective::Full;
    let mut c = LossComponents::default();
    let (ce, gce) = cross_entropy_loss(&out.probs, &target)?;
    let (dice, gdice) = dice_loss(&out.probs, &target)?;
    c.ce = ce;
    c.dice = dice;
    let mut gprobs = Tensor::zeros(out.probs.shape())?;
    if full {
        gprobs = gce.scale(T::from_f64(wts.ce));
        gprobs.add_assign(&gdice.scale(T::from_f64(wts.dice)))?;
    }
    let mut grads_out = vec![gprobs];
    if let Some(vae) = &out.vae {
        let (l2, gl2) = l2_recon_loss(&vae.recon, &image, cfg.l2_reduction)?;
        let (kl, gmu, glv) = kl_loss(&vae.mu, &vae.logvar, spec.batch * d * h * w)?;
        c.l2 = l2;
        c.kl = kl;
        grads_out.push(gl2.scale(T::from_f64(wts.l2)));
        grads_out.push(gmu.scale(T::from_f64(wts.kl)));
        grads_out.push(glv.scale(T::from_f64(wts.kl)));
    }
    tape.backward(graph, &mut cx, grads_out)?;
    let report = cx.memory_report();
    let mut grads = cx.into_grads();
    let total = if full { total_loss(&c, &wts) } else { wts.l2 * c.l2 + wts.kl * c.kl };
    if !full {
        grads = vae_only(model, grads)?;
    }
    Ok((StepRecord { step: 0, total, ce: c.ce, dice: c.dice, l2: c.l2, kl: c.kl }, grads, report))
}

/// Keeps only the gradients of the VAE branch parameters.
fn vae_only<T: Scalar>(model: &Model<T>, grads: Grads<T>) -> Result<Grads<T>> {
    let mut kept = Grads::new(grads.len());
    for (id, g) in grads.iter() {
        if let Some(g) = g {
            if model.params().name(id).starts_with("vae.") {
                kept.accumulate(id, g.clone())?;
            }
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use invres_core::data::{generate_synthetic, SyntheticConfig};
    use invres_core::models::Arch;

    fn tiny(steps: usize) -> (TrainConfig, Vec<(Volume, LabelVolume)>) {
        let mut cfg = TrainConfig::default();
        cfg.model.arch = Arch::FullyInvRes;
        cfg.model.levels = 2;
        cfg.model.base_width = 4;
        cfg.model.blocks_per_level = 1;
        cfg.model.latent_dim = 4;
        cfg.model.patch = [8; 3];
        cfg.steps = steps;
        let data =
            generate_synthetic(&SyntheticConfig { num_volumes: 2, size: [16; 3], ..Default::default() }).unwrap();
        (cfg, data)
    }

    #[test]
    fn one_step_gives_one_record() {
        let (cfg, data) = tiny(1);
        let (_, report) = train::<f32>(&cfg, &data, None).unwrap();
        assert_eq!(report.steps.len(), 1);
        assert_eq!(report.steps[0].step, 1);
        assert!(report.steps[0].total.is_finite());
        assert!(report.memory.peak_stored_scalars > 0);
    }

    #[test]
    fn vae_only_leaves_the_trunk_untouched() {
        let (mut cfg, data) = tiny(2);
        cfg.objective = Objective::VaeOnly;
        let before: Model<f64> = Model::build(&cfg.model).unwrap();
        let (after, _) = train::<f64>(&cfg, &data, None).unwrap();
        let mut moved_vae = false;
        for (id, name, t) in before.params().iter() {
            let same = after.params().get(id) == t;
            if name.starts_with("vae.") {
                moved_vae |= !same;
            } else {
                assert!(same, "{name} changed");
            }
        }
        assert!(moved_vae);
    }

    #[test]
    fn rejects_mismatched_data() {
        let (mut cfg, data) = tiny(1);
        cfg.model.in_channels = 3;
        assert!(matches!(train::<f32>(&cfg, &data, None), Err(Error::Usage(_))));
    }
}
