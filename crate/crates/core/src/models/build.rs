use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::spec::{Arch, ModelSpec};
use crate::autodiff::{Graph, GraphBuilder, ParamStore, Section, ValueId};
use crate::layers::{
    AddOp, Block, ConcatOp, Conv3dOp, ConvInit, CouplingBlock, Direction, GapOp, InstanceNormOp, InvertibleResampleOp,
    LeakyReluOp, LinearOp, MaxPoolOp, ReparamOp, ReshapeOp, SoftmaxOp, SplitOp, TrilinearOp,
};
use crate::{Result, Scalar};

/// `x + act(norm(conv(act(norm(conv(x))))))` at constant width.
fn residual_block<T: Scalar>(store: &mut ParamStore<T>, name: &str, shape: &[usize]) -> Result<Block<T>> {
    let c = shape[1];
    let mut b = GraphBuilder::new();
    let x = b.input("x", shape);
    let mut v = x;
    for j in 0..2 {
        v = b.apply(
            &format!("conv{j}"),
            Conv3dOp::new(store, &format!("{name}.conv{j}"), c, c, 3, ConvInit::He)?,
            &[v],
        )?;
        v = b.apply(&format!("norm{j}"), InstanceNormOp::new(store, &format!("{name}.norm{j}"), c)?, &[v])?;
        v = b.apply(&format!("act{j}"), LeakyReluOp::default(), &[v])?;
    }
    let out = b.apply("add", AddOp, &[x, v])?;
    b.output(out);
    Ok(Block::new("residual_block", b.build()))
}

/// Max pooling followed by a pointwise channel projection.
fn pool_down<T: Scalar>(store: &mut ParamStore<T>, name: &str, shape: &[usize], c_out: usize) -> Result<Block<T>> {
    let mut b = GraphBuilder::new();
    let x = b.input("x", shape);
    let v = b.apply("pool", MaxPoolOp { window: 2 }, &[x])?;
    let v = b.apply("proj", Conv3dOp::new(store, &format!("{name}.proj"), shape[1], c_out, 1, ConvInit::He)?, &[v])?;
    b.output(v);
    Ok(Block::new("maxpool_down", b.build()))
}

/// Pointwise channel projection followed by trilinear upsampling.
fn interp_up<T: Scalar>(store: &mut ParamStore<T>, name: &str, shape: &[usize], c_out: usize) -> Result<Block<T>> {
    let mut b = GraphBuilder::new();
    let x = b.input("x", shape);
    let v = b.apply("proj", Conv3dOp::new(store, &format!("{name}.proj"), shape[1], c_out, 1, ConvInit::He)?, &[x])?;
    let v = b.apply("interp", TrilinearOp { factor: 2 }, &[v])?;
    b.output(v);
    Ok(Block::new("trilinear_up", b.build()))
}

struct Net<'a, T: Scalar> {
    spec: &'a ModelSpec,
    store: &'a mut ParamStore<T>,
    b: GraphBuilder<T>,
}

impl<T: Scalar> Net<'_, T> {
    fn shape(&self, v: ValueId) -> Vec<usize> {
        self.b.shape(v).to_vec()
    }

    /// `blocks_per_level` width-preserving blocks of the architecture's kind.
    fn level_blocks(&mut self, prefix: &str, mut v: ValueId) -> Result<ValueId> {
        for j in 0..self.spec.blocks_per_level {
            let name = format!("{prefix}.b{j}");
            let shape = self.shape(v);
            v = match self.spec.arch {
                Arch::Baseline => {
                    let block = residual_block(self.store, &name, &shape)?;
                    self.b.apply(&name, block, &[v])?
                }
                Arch::PartiallyInvRes | Arch::FullyInvRes => {
                    let block =
                        CouplingBlock::new(self.store, &name, &shape, self.spec.coupling_depth, ConvInit::Zero)?;
                    self.b.apply(&name, block, &[v])?
                }
            };
        }
        Ok(v)
    }

    /// Encoder for pooled architectures. Returns the skip features of every
    /// level above the bottom and the bottom feature.
    fn pooled_encoder(&mut self, mut v: ValueId, widths: &[usize]) -> Result<(Vec<ValueId>, ValueId)> {
        let mut skips = Vec::new();
        let last = widths.len() - 1;
        for l in 0..widths.len() {
            v = self.level_blocks(&format!("enc{l}"), v)?;
            if l < last {
                skips.push(v);
                let name = format!("down{l}");
                let down = pool_down(self.store, &name, &self.shape(v), widths[l + 1])?;
                v = self.b.apply(&name, down, &[v])?;
            }
        }
        Ok((skips, v))
    }

    fn pooled_decoder(&mut self, mut v: ValueId, skips: &[ValueId], widths: &[usize]) -> Result<ValueId> {
        for l in (0..skips.len()).rev() {
            let name = format!("up{l}");
            let up = interp_up(self.store, &name, &self.shape(v), widths[l])?;
            v = self.b.apply(&name, up, &[v])?;
            v = self.b.apply(&format!("cat{l}"), ConcatOp { at: widths[l] }, &[skips[l], v])?;
            v = self.level_blocks(&format!("dec{l}"), v)?;
        }
        Ok(v)
    }

    fn invertible_encoder(&mut self, mut v: ValueId, widths: &[usize]) -> Result<(Vec<ValueId>, ValueId)> {
        let mut skips = Vec::new();
        let last = widths.len() - 1;
        for (l, &w) in widths.iter().enumerate() {
            v = self.level_blocks(&format!("enc{l}"), v)?;
            if l < last {
                let halves = self.b.apply_multi(&format!("split{l}"), SplitOp { at: w / 2 }, &[v])?;
                skips.push(halves[0]);
                let name = format!("down{l}");
                let down = InvertibleResampleOp::new(self.store, &name, Direction::Down, widths[l + 1])?;
                v = self.b.apply(&name, down, &[halves[1]])?;
            }
        }
        Ok((skips, v))
    }

    fn invertible_decoder(&mut self, mut v: ValueId, skips: &[ValueId], widths: &[usize]) -> Result<ValueId> {
        for l in (0..skips.len()).rev() {
            let name = format!("up{l}");
            let up = InvertibleResampleOp::new(self.store, &name, Direction::Up, widths[l + 1])?;
            v = self.b.apply(&name, up, &[v])?;
            v = self.b.apply(&format!("cat{l}"), ConcatOp { at: widths[l] / 2 }, &[skips[l], v])?;
            v = self.level_blocks(&format!("dec{l}"), v)?;
        }
        Ok(v)
    }

    /// GAP → (μ, logvar) → z → linear + reshape → `levels` × (upsample,
    /// conv, act) → pointwise conv to the input channels.
    fn vae_branch(&mut self, feature: ValueId, eps: ValueId) -> Result<(ValueId, ValueId, ValueId)> {
        let spec = self.spec;
        let (n, c) = (spec.batch, self.shape(feature)[1]);
        let vc = spec.base_width;
        let seed_extent: Vec<usize> = spec.patch.iter().map(|e| e >> spec.levels).collect();
        let seed_len = vc * seed_extent.iter().product::<usize>();

        let pooled = self.b.apply("vae.gap", GapOp, &[feature])?;
        let mu = self.b.apply("vae.mu", LinearOp::new(self.store, "vae.mu", c, spec.latent_dim)?, &[pooled])?;
        let logvar =
            self.b.apply("vae.logvar", LinearOp::new(self.store, "vae.logvar", c, spec.latent_dim)?, &[pooled])?;
        let z = self.b.apply("vae.sample", ReparamOp, &[mu, logvar, eps])?;
        let mut v =
            self.b.apply("vae.expand", LinearOp::new(self.store, "vae.expand", spec.latent_dim, seed_len)?, &[z])?;
        let mut shape = vec![n, vc];
        shape.extend_from_slice(&seed_extent);
        v = self.b.apply("vae.reshape", ReshapeOp { shape }, &[v])?;
        for i in 0..spec.levels {
            v = self.b.apply(&format!("vae.up{i}"), TrilinearOp { factor: 2 }, &[v])?;
            let conv = Conv3dOp::new(self.store, &format!("vae.conv{i}"), vc, vc, 3, ConvInit::He)?;
            v = self.b.apply(&format!("vae.conv{i}"), conv, &[v])?;
            v = self.b.apply(&format!("vae.act{i}"), LeakyReluOp::default(), &[v])?;
        }
        let out = Conv3dOp::new(self.store, "vae.out", vc, spec.in_channels, 1, ConvInit::He)?;
        let recon = self.b.apply("vae.out", out, &[v])?;
        Ok((recon, mu, logvar))
    }
}

/// Builds the graph for `spec`, registering its parameters in `store`.
pub(super) fn assemble<T: Scalar>(spec: &ModelSpec, store: &mut ParamStore<T>) -> Result<Graph<T>> {
    let widths = spec.encoder_widths();
    let input_shape = spec.input_shape();
    let mut net = Net { spec, store, b: GraphBuilder::new() };

    let x = net.b.input("image", &input_shape);
    let eps = spec.vae.then(|| net.b.input("eps", &[spec.batch, spec.latent_dim]));

    net.b.set_section(Section::Stem);
    let stem = Conv3dOp::new(net.store, "stem", spec.in_channels, widths[0], 3, ConvInit::He)?;
    let v = net.b.apply("stem", stem, &[x])?;

    net.b.set_section(Section::Trunk);
    let (skips, bottom) = match spec.arch {
        Arch::FullyInvRes => net.invertible_encoder(v, &widths)?,
        _ => net.pooled_encoder(v, &widths)?,
    };

    let vae = match eps {
        Some(eps) => {
            net.b.set_section(Section::Vae);
            let out = net.vae_branch(bottom, eps)?;
            net.b.set_section(Section::Trunk);
            Some(out)
        }
        None => None,
    };

    let top = match spec.arch {
        Arch::FullyInvRes => net.invertible_decoder(bottom, &skips, &widths)?,
        _ => net.pooled_decoder(bottom, &skips, &widths)?,
    };

    net.b.set_section(Section::Head);
    let c_top = net.shape(top)[1];
    let head = Conv3dOp::new(net.store, "head", c_top, spec.num_classes, 1, ConvInit::He)?;
    let logits = net.b.apply("head", head, &[top])?;
    let probs = net.b.apply("softmax", SoftmaxOp, &[logits])?;

    net.b.output(probs);
    if let Some((recon, mu, logvar)) = vae {
        net.b.output(recon);
        net.b.output(mu);
        net.b.output(logvar);
    }
    Ok(net.b.build())
}
