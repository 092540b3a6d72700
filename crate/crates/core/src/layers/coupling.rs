use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::primitive::{Conv3dOp, ConvInit, InstanceNormOp, LeakyReluOp};
use crate::autodiff::{
    Context, Graph, GraphBuilder, Op, ParamId, ParamStore, Reconstructed, Saved, StoragePolicy, Tape,
};
use crate::tensor::{add, concat_channels, split_channels, sub};
use crate::{Error, Result, Scalar, Tensor};

/// `depth` × (3³ conv → instance norm → leaky ReLU) followed by a final 3³
/// conv, all at `shape[1]` channels.
pub fn residual_subnet<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: &[usize],
    depth: usize,
    final_init: ConvInit,
) -> Result<Graph<T>> {
    let c = shape[1];
    let mut b = GraphBuilder::new();
    let mut v = b.input("x", shape);
    for j in 0..depth {
        let conv = Conv3dOp::new(store, &format!("{name}.conv{j}"), c, c, 3, ConvInit::He)?;
        v = b.apply(&format!("conv{j}"), conv, &[v])?;
        let norm = InstanceNormOp::new(store, &format!("{name}.norm{j}"), c)?;
        v = b.apply(&format!("norm{j}"), norm, &[v])?;
        v = b.apply(&format!("act{j}"), LeakyReluOp::default(), &[v])?;
    }
    let last = Conv3dOp::new(store, &format!("{name}.conv_out"), c, c, 3, final_init)?;
    v = b.apply("conv_out", last, &[v])?;
    b.output(v);
    Ok(b.build())
}

/// Additive coupling `y1 = x1 + N1(x2)`, `y2 = x2 + N2(y1)` on a channel split
/// at `C/2`. The inverse is `x2 = y2 − N2(y1)`, `x1 = y1 − N1(x2)`.
pub struct CouplingBlock<T: Scalar> {
    n1: Graph<T>,
    n2: Graph<T>,
    half: usize,
}

impl<T: Scalar> CouplingBlock<T> {
    /// Builds the block for inputs of `shape` (`[N, C, D, H, W]`, `C` even).
    /// With `ConvInit::Zero` for the final convs the block starts as the identity.
    pub fn new(
        store: &mut ParamStore<T>,
        name: &str,
        shape: &[usize],
        depth: usize,
        final_init: ConvInit,
    ) -> Result<Self> {
        if shape.len() != 5 || !shape[1].is_multiple_of(2) {
            return Err(Error::arg("coupling", format!("input {shape:?} needs 5 axes and an even channel count")));
        }
        let half = shape[1] / 2;
        let mut sub_shape = shape.to_vec();
        sub_shape[1] = half;
        let n1 = residual_subnet(store, &format!("{name}.n1"), &sub_shape, depth, final_init)?;
        let n2 = residual_subnet(store, &format!("{name}.n2"), &sub_shape, depth, final_init)?;
        Ok(CouplingBlock { n1, n2, half })
    }

    fn split(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        if x.rank() != 5 || x.shape()[1] != 2 * self.half {
            return Err(Error::arg(
                "coupling",
                format!("input {:?} does not have {} channels", x.shape(), 2 * self.half),
            ));
        }
        split_channels(x, self.half)
    }

    fn eval(cx: &mut Context<'_, T>, net: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(net.evaluate_in(cx, vec![x.clone()])?.remove(0))
    }

    fn record(cx: &mut Context<'_, T>, net: &Graph<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        let mut tape = Tape::new(net, StoragePolicy::Store);
        let h = tape.forward(net, cx, vec![x.clone()])?.remove(0);
        Ok((h, tape))
    }

    /// Gradient of the input given recorded sub-tapes `t1` (N1 at x2) and `t2` (N2 at y1).
    fn grad_from_tapes(
        &self,
        cx: &mut Context<'_, T>,
        mut t1: Tape<T>,
        mut t2: Tape<T>,
        grad: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let (gy1, gy2) = split_channels(grad, self.half)?;
        let mut g_y1 = t2.backward(&self.n2, cx, vec![gy2.clone()])?.remove(0);
        g_y1.add_assign(&gy1)?;
        let mut gx2 = t1.backward(&self.n1, cx, vec![g_y1.clone()])?.remove(0);
        gx2.add_assign(&gy2)?;
        concat_channels(&g_y1, &gx2)
    }

    /// Forward map on a concrete tensor, without recording.
    pub fn apply(&self, cx: &mut Context<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (x1, x2) = self.split(x)?;
        let y1 = add(&x1, &Self::eval(cx, &self.n1, &x2)?)?;
        let y2 = add(&x2, &Self::eval(cx, &self.n2, &y1)?)?;
        concat_channels(&y1, &y2)
    }

    /// Inverse map on a concrete tensor: `x2` is rebuilt first, then `x1`.
    pub fn invert(&self, cx: &mut Context<'_, T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        let (y1, y2) = self.split(y)?;
        let x2 = sub(&y2, &Self::eval(cx, &self.n2, &y1)?)?;
        let x1 = sub(&y1, &Self::eval(cx, &self.n1, &x2)?)?;
        concat_channels(&x1, &x2)
    }
}

impl<T: Scalar> Op<T> for CouplingBlock<T> {
    fn kind(&self) -> &'static str {
        "coupling"
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        let want = {
            let mut s = self.n1.input_shapes().remove(0);
            s[1] *= 2;
            s
        };
        match inputs {
            [s] if *s == want.as_slice() => Ok(vec![want]),
            [s] => Err(Error::ShapeMismatch { left: s.to_vec(), right: want }),
            _ => Err(Error::arg("coupling", format!("expected 1 input, got {}", inputs.len()))),
        }
    }

    fn forward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        if !save {
            return Ok((vec![self.apply(cx, inputs[0])?], Vec::new()));
        }
        let (x1, x2) = self.split(inputs[0])?;
        let (h1, t1) = Self::record(cx, &self.n1, &x2)?;
        let y1 = add(&x1, &h1)?;
        let (h2, t2) = Self::record(cx, &self.n2, &y1)?;
        let y2 = add(&x2, &h2)?;
        Ok((vec![concat_channels(&y1, &y2)?], vec![t1, t2]))
    }

    fn backward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        let mut saved = saved.into_iter();
        let (t1, t2) = match (saved.next(), saved.next()) {
            (Some(t1), Some(t2)) => (t1, t2),
            _ => {
                let (x1, x2) = self.split(inputs[0])?;
                let (h1, t1) = Self::record(cx, &self.n1, &x2)?;
                let y1 = add(&x1, &h1)?;
                (t1, Self::record(cx, &self.n2, &y1)?.1)
            }
        };
        Ok(vec![self.grad_from_tapes(cx, t1, t2, &grads[0])?])
    }

    fn is_invertible(&self) -> bool {
        true
    }

    fn inverse(&self, cx: &mut Context<'_, T>, outputs: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Ok(vec![self.invert(cx, outputs[0])?])
    }

    /// Rebuilds the input while recording both sub-networks once, so the
    /// backward step costs one extra evaluation of each of N1 and N2.
    fn inverse_backward(
        &self,
        cx: &mut Context<'_, T>,
        outputs: &[&Tensor<T>],
        grads: &[Tensor<T>],
    ) -> Result<Reconstructed<T>> {
        let (y1, y2) = self.split(outputs[0])?;
        let (h2, t2) = Self::record(cx, &self.n2, &y1)?;
        let x2 = sub(&y2, &h2)?;
        drop(h2);
        let (h1, t1) = Self::record(cx, &self.n1, &x2)?;
        let x1 = sub(&y1, &h1)?;
        let x = concat_channels(&x1, &x2)?;
        let gx = self.grad_from_tapes(cx, t1, t2, &grads[0])?;
        Ok((vec![x], vec![gx]))
    }

    fn inverse_evaluations(&self) -> usize {
        2
    }

    fn params(&self) -> Vec<ParamId> {
        self.n1.nodes().iter().chain(self.n2.nodes()).flat_map(|n| n.op.params()).collect()
    }
}

/// Applies a coupling block to `x` with the parameters in `params`.
pub fn coupling_forward<T: Scalar>(
    block: &CouplingBlock<T>,
    params: &ParamStore<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    block.apply(&mut Context::new(params), x)
}

/// Reconstructs the input of [`coupling_forward`] from its output.
pub fn coupling_inverse<T: Scalar>(
    block: &CouplingBlock<T>,
    params: &ParamStore<T>,
    y: &Tensor<T>,
) -> Result<Tensor<T>> {
    block.invert(&mut Context::new(params), y)
}
