//! Self-checks of the engine on small networks: layer inverses, agreement of
//! gradients across storage policies, and finite differences of the loss.

use std::fmt;

use invres_core::autodiff::{run_pass, Context, Grads, ParamStore, StoragePolicy};
use invres_core::models::{Arch, Model, ModelSpec};
use invres_core::rng::SeededRng;
use invres_core::{Precision, Scalar, Tensor};
use serde::Serialize;

use crate::config::TrainConfig;
use crate::error::Result;
use crate::train::step_grads;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    /// Largest observed error, relative where noted by the suite.
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "ok  " } else { "FAIL" };
        write!(f, "{mark} {:<22} {:<40} err={:.3e} tol={:.1e}", self.suite, self.name, self.error, self.tolerance)
    }
}

fn check(suite: &'static str, name: impl Into<String>, error: f64, tolerance: f64) -> Check {
    Check { suite, name: name.into(), error, tolerance, passed: error.is_finite() && error <= tolerance }
}

/// A small spec every suite runs on.
pub fn small_spec(arch: Arch) -> ModelSpec {
    ModelSpec {
        arch,
        in_channels: 2,
        num_classes: 3,
        levels: 2,
        base_width: 4,
        blocks_per_level: 1,
        coupling_depth: 1,
        vae: true,
        latent_dim: 4,
        patch: [8; 3],
        batch: 1,
        seed: 5,
    }
}

/// Model with its parameters perturbed away from initialization, so that
/// zero-initialized branches contribute. Mixing matrices stay orthogonal.
fn perturbed<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    let mut model = Model::<T>::build(spec)?;
    let mut rng = SeededRng::derive(seed, "verify-jitter");
    let params = model.params_mut();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        if params.name(id).ends_with(".mix") {
            continue;
        }
        for v in params.get_mut(id).data_mut() {
            *v = T::from_f64(v.as_f64() + 0.05 * rng.normal());
        }
    }
    Ok(model)
}

fn rel_diff(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(1e-12)
}

/// Max absolute difference between two gradient sets, relative to the largest
/// reference magnitude.
fn grads_rel_diff<T: Scalar>(a: &Grads<T>, b: &Grads<T>) -> f64 {
    let mut scale = 0.0f64;
    let mut diff = 0.0f64;
    for ((_, ga), (_, gb)) in a.iter().zip(b.iter()) {
        let zeros = |g: Option<&Tensor<T>>, n: usize| g.map(|t| t.to_f64_vec()).unwrap_or_else(|| vec![0.0; n]);
        let n = ga.or(gb).map_or(0, |t| t.len());
        for (x, y) in zeros(ga, n).iter().zip(&zeros(gb, n)) {
            scale = scale.max(x.abs());
            diff = diff.max((x - y).abs());
        }
    }
    diff / scale.max(1e-12)
}

fn tolerances<T: Scalar>() -> (f64, f64) {
    if core::mem::size_of::<T>() == 8 {
        (1e-10, 1e-8)
    } else {
        (1e-4, 1e-3)
    }
}

/// Every invertible node of every architecture reconstructs its inputs.
pub fn invertibility<T: Scalar>() -> Result<Vec<Check>> {
    let (tol, _) = tolerances::<T>();
    let mut out = Vec::new();
    for arch in Arch::ALL {
        let model = perturbed::<T>(&small_spec(arch), 1)?;
        let graph = model.graph();
        let mut rng = SeededRng::derive(2, arch.name());
        let mut cx = Context::new(model.params());
        let mut worst = 0.0f64;
        let mut count = 0;
        for node in graph.nodes().iter().filter(|n| n.op.is_invertible()) {
            let inputs: Vec<Tensor<T>> = node.inputs.iter().map(|&v| rng.normal_tensor(graph.shape(v), 1.0)).collect();
            let refs: Vec<&Tensor<T>> = inputs.iter().collect();
            let (outputs, _) = node.op.forward(&mut cx, &refs, false)?;
            let orefs: Vec<&Tensor<T>> = outputs.iter().collect();
            let back = node.op.inverse(&mut cx, &orefs)?;
            for (x, y) in inputs.iter().zip(&back) {
                worst = worst.max(x.max_abs_diff(y)?);
            }
            count += 1;
        }
        out.push(check("invertibility", format!("{} ({count} nodes)", arch.name()), worst, tol));
    }
    Ok(out)
}

/// Parameter and input gradients agree across storage policies.
pub fn gradient_equivalence<T: Scalar>() -> Result<Vec<Check>> {
    let (_, tol) = tolerances::<T>();
    let mut out = Vec::new();
    for arch in Arch::ALL {
        let model = perturbed::<T>(&small_spec(arch), 3)?;
        let mut rng = SeededRng::derive(4, arch.name());
        let image: Tensor<T> = rng.uniform_tensor(&model.spec().input_shape(), 0.0, 1.0);
        let eps = model.sample_eps(&mut rng);
        let inputs = model.inputs(image, eps)?;
        let seeds: Vec<Tensor<T>> = model.graph().output_shapes().iter().map(|s| rng.normal_tensor(s, 1.0)).collect();
        let pass = |policy| run_pass(model.graph(), model.params(), policy, inputs.clone(), seeds.clone(), false);
        let reference = pass(StoragePolicy::Store)?;
        for policy in [StoragePolicy::Invertible, StoragePolicy::Checkpoint { segment_len: None }] {
            let other = pass(policy)?;
            let mut err = grads_rel_diff(&reference.grads, &other.grads);
            for (a, b) in reference.input_grads.iter().zip(&other.input_grads) {
                let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
                err = err.max(a.max_abs_diff(b)? / scale.max(1e-12));
            }
            out.push(check("gradient-equivalence", format!("{} store vs {}", arch.name(), policy.name()), err, tol));
        }
    }
    Ok(out)
}

/// Directional derivatives of the full training loss against central
/// differences, in double precision.
pub fn finite_differences() -> Result<Vec<Check>> {
    const H: f64 = 1e-6;
    let mut out = Vec::new();
    for arch in Arch::ALL {
        let spec = small_spec(arch);
        let model = perturbed::<f64>(&spec, 6)?;
        let cfg = TrainConfig { model: spec.clone(), policy: model.default_policy(), ..TrainConfig::default() };
        let mut rng = SeededRng::derive(7, arch.name());
        let image: Tensor<f64> = rng.uniform_tensor(&spec.input_shape(), 0.0, 1.0);
        let labels: Vec<u8> = (0..spec.patch.iter().product()).map(|_| rng.below(spec.num_classes) as u8).collect();
        let eps = model.sample_eps(&mut rng);
        let (_, grads, _) = step_grads(&cfg, &model, image.clone(), &labels, eps.clone())?;

        let direction: Vec<Tensor<f64>> =
            model.params().iter().map(|(_, _, t)| rng.normal_tensor(t.shape(), 1.0)).collect();
        let analytic: f64 = grads
            .iter()
            .zip(&direction)
            .map(|((_, g), d)| g.map_or(0.0, |g| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum()))
            .sum();
        let loss_at = |sign: f64| -> Result<f64> {
            let mut params: ParamStore<f64> = model.params().clone();
            let ids: Vec<_> = params.ids().collect();
            for (id, d) in ids.into_iter().zip(&direction) {
                for (v, dv) in params.get_mut(id).data_mut().iter_mut().zip(d.data()) {
                    *v += sign * H * dv;
                }
            }
            let shifted = Model::with_params(&spec, params)?;
            Ok(step_grads(&cfg, &shifted, image.clone(), &labels, eps.clone())?.0.total)
        };
        let numeric = (loss_at(1.0)? - loss_at(-1.0)?) / (2.0 * H);
        let err = rel_diff(analytic, numeric, analytic.abs().max(numeric.abs()));
        out.push(check("finite-differences", format!("{} total loss", arch.name()), err, 1e-5));
    }
    Ok(out)
}

/// All suites at `precision`; finite differences always run in f64.
pub fn run_all(precision: Precision) -> Result<Vec<Check>> {
    let mut checks = match precision {
        Precision::F32 => {
            let mut c = invertibility::<f32>()?;
            c.extend(gradient_equivalence::<f32>()?);
            c
        }
        Precision::F64 => {
            let mut c = invertibility::<f64>()?;
            c.extend(gradient_equivalence::<f64>()?);
            c
        }
    };
    checks.extend(finite_differences()?);
    Ok(checks)
}
