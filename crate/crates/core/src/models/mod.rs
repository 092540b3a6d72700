//! The three segmentation networks, optionally with a VAE reconstruction
//! branch, built as static graphs over a named parameter store.
//!
//! Every model takes `[N, C_in, D, H, W]` patches and returns per-voxel class
//! probabilities `[N, K, D, H, W]`. With the VAE branch it takes a second
//! input `ε` of shape `[N, latent]` and also returns the reconstruction,
//! `μ` and `logvar`. Passing `ε = 0` gives the deterministic evaluation mode
//! `z = μ`.

mod build;
mod spec;

use alloc::vec;
use alloc::vec::Vec;

pub use spec::{Arch, ModelSpec};

use crate::autodiff::{Context, Graph, Node, ParamStore, Section, StoragePolicy, Tape};
use crate::rng::SeededRng;
use crate::{Error, Result, Scalar, Tensor};

/// A built network: its graph, its parameters and the spec it came from.
pub struct Model<T: Scalar> {
    spec: ModelSpec,
    graph: Graph<T>,
    params: ParamStore<T>,
}

/// Outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ModelOutput<T> {
    pub probs: Tensor<T>,
    pub vae: Option<VaeOutput<T>>,
}

#[derive(Debug, Clone)]
pub struct VaeOutput<T> {
    pub recon: Tensor<T>,
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
}

impl<T> ModelOutput<T> {
    fn from_vec(mut outs: Vec<Tensor<T>>) -> Self {
        let vae = (outs.len() == 4).then(|| {
            let logvar = outs.pop().unwrap();
            let mu = outs.pop().unwrap();
            let recon = outs.pop().unwrap();
            VaeOutput { recon, mu, logvar }
        });
        ModelOutput { probs: outs.remove(0), vae }
    }
}

/// Baseline residual U-Net.
pub fn build_baseline<T: Scalar>(spec: &ModelSpec) -> Result<Model<T>> {
    Model::build(&ModelSpec { arch: Arch::Baseline, ..spec.clone() })
}

/// U-Net with coupling blocks inside each level.
pub fn build_partially_invres<T: Scalar>(spec: &ModelSpec) -> Result<Model<T>> {
    Model::build(&ModelSpec { arch: Arch::PartiallyInvRes, ..spec.clone() })
}

/// U-Net whose whole encoder/decoder trunk is invertible.
pub fn build_fully_invres<T: Scalar>(spec: &ModelSpec) -> Result<Model<T>> {
    Model::build(&ModelSpec { arch: Arch::FullyInvRes, ..spec.clone() })
}

/// Rebuilds `model` with a VAE branch of `latent_dim` on its deepest
/// encoder feature. Existing parameters are kept.
pub fn attach_vae_branch<T: Scalar>(model: Model<T>, latent_dim: usize) -> Result<Model<T>> {
    let spec = ModelSpec { vae: true, latent_dim, ..model.spec };
    Model::with_params(&spec, model.params)
}

impl<T: Scalar> Model<T> {
    /// Builds the architecture named by `spec.arch` with fresh parameters.
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        Self::with_params(spec, ParamStore::new(spec.seed))
    }

    /// Builds the graph over an existing parameter store. Parameters the
    /// graph needs but the store lacks are initialized; existing ones must
    /// have matching shapes.
    pub fn with_params(spec: &ModelSpec, mut params: ParamStore<T>) -> Result<Self> {
        spec.validate()?;
        let graph = build::assemble(spec, &mut params)?;
        Ok(Model { spec: spec.clone(), graph, params })
    }

    /// Same network and parameters for another batch size or patch shape.
    pub fn reshaped(self, batch: usize, patch: [usize; 3]) -> Result<Self> {
        let spec = ModelSpec { batch, patch, ..self.spec };
        Self::with_params(&spec, self.params)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// The policy each architecture is meant to train under.
    pub fn default_policy(&self) -> StoragePolicy {
        match self.spec.arch {
            Arch::Baseline => StoragePolicy::Store,
            Arch::PartiallyInvRes | Arch::FullyInvRes => StoragePolicy::Invertible,
        }
    }

    /// Nodes of the encoder/decoder trunk without a registered inverse.
    pub fn non_invertible_trunk_nodes(&self) -> Vec<&Node<T>> {
        self.graph.nodes().iter().filter(|n| n.section == Section::Trunk && !n.op.is_invertible()).collect()
    }

    /// Shape of the `ε` input, when the VAE branch is present.
    pub fn latent_shape(&self) -> Option<[usize; 2]> {
        self.spec.vae.then_some([self.spec.batch, self.spec.latent_dim])
    }

    /// Graph inputs for `image`, with `ε = 0` unless a sample is given.
    pub fn inputs(&self, image: Tensor<T>, eps: Option<Tensor<T>>) -> Result<Vec<Tensor<T>>> {
        let want = self.spec.input_shape();
        if image.shape() != want.as_slice() {
            return Err(Error::ShapeMismatch { left: image.shape().to_vec(), right: want });
        }
        let mut inputs = vec![image];
        if let Some(shape) = self.latent_shape() {
            let eps = match eps {
                Some(e) if e.shape() == shape => e,
                Some(e) => return Err(Error::ShapeMismatch { left: e.shape().to_vec(), right: shape.to_vec() }),
                None => Tensor::zeros(&shape)?,
            };
            inputs.push(eps);
        }
        Ok(inputs)
    }

    /// Draws `ε ~ N(0, 1)` for a training pass.
    pub fn sample_eps(&self, rng: &mut SeededRng) -> Option<Tensor<T>> {
        self.latent_shape().map(|s| rng.normal_tensor(&s, 1.0))
    }

    /// Evaluation-mode forward pass that retains nothing.
    pub fn forward(&self, image: Tensor<T>) -> Result<ModelOutput<T>> {
        let inputs = self.inputs(image, None)?;
        let mut cx = Context::new(&self.params);
        let mut tape = Tape::inference(&self.graph);
        Ok(ModelOutput::from_vec(tape.forward(&self.graph, &mut cx, inputs)?))
    }

    /// Splits raw graph outputs into probabilities and VAE outputs.
    pub fn split_outputs(outputs: Vec<Tensor<T>>) -> ModelOutput<T> {
        ModelOutput::from_vec(outputs)
    }
}
