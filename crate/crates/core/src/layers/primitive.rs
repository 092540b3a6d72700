use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{expect_inputs, single, Context, Op, ParamId, ParamStore, Saved};
use crate::kernels::{self, conv_output_extent, INSTANCE_NORM_EPS, LEAKY_RELU_SLOPE};
use crate::rng::SeededRng;
use crate::tensor::{add, concat_channels, split_channels};
use crate::{Error, Result, Scalar, Tensor};

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// He-normal initializer for a weight with `fan_in` inputs per output.
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize) -> impl FnOnce(&mut SeededRng) -> Tensor<T> + '_ {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    move |rng| rng.normal_tensor(shape, std)
}

pub fn zeros_init<T: Scalar>(shape: &[usize]) -> impl FnOnce(&mut SeededRng) -> Tensor<T> + '_ {
    move |_| Tensor::from_parts(shape.to_vec(), vec![T::zero(); shape.iter().product()])
}

pub fn ones_init<T: Scalar>(shape: &[usize]) -> impl FnOnce(&mut SeededRng) -> Tensor<T> + '_ {
    move |_| Tensor::from_parts(shape.to_vec(), vec![T::one(); shape.iter().product()])
}

/// How a convolution weight starts out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvInit {
    He,
    Zero,
}

#[derive(Debug, Clone)]
pub struct Conv3dOp {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv3dOp {
    /// Registers `{name}.weight` and `{name}.bias`; `padding = kernel / 2`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        init: ConvInit,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::arg("conv3d", format!("kernel size {kernel} must be odd")));
        }
        let shape = [c_out, c_in, kernel, kernel, kernel];
        let weight = match init {
            ConvInit::He => {
                store.get_or_init(&format!("{name}.weight"), &shape, he_normal(&shape, c_in * kernel.pow(3)))?
            }
            ConvInit::Zero => store.get_or_init(&format!("{name}.weight"), &shape, zeros_init(&shape))?,
        };
        let bias = store.get_or_init(&format!("{name}.bias"), &[c_out], zeros_init(&[c_out]))?;
        Ok(Conv3dOp { weight, bias, c_in, c_out, kernel, stride: 1, padding: kernel / 2 })
    }
}

impl<T: Scalar> Op<T> for Conv3dOp {
    fn kind(&self) -> &'static str {
        "conv3d"
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        expect_inputs("conv3d", inputs, 1)?;
        let s = inputs[0];
        if s.len() != 5 || s[1] != self.c_in {
            return Err(Error::arg("conv3d", format!("input {s:?} does not fit a {}-channel weight", self.c_in)));
        }
        let mut out = s.to_vec();
        out[1] = self.c_out;
        for e in &mut out[2..] {
            *e = conv_output_extent(*e, self.kernel, self.stride, self.padding)
                .ok_or_else(|| Error::arg("conv3d", format!("extent {e} gives a non-integral output")))?;
        }
        Ok(vec![out])
    }

    fn forward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        single(kernels::conv3d(inputs[0], cx.param(self.weight), Some(cx.param(self.bias)), self.stride, self.padding)?)
    }

    fn backward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        let g = kernels::conv3d_backward(inputs[0], cx.param(self.weight), &grads[0], self.stride, self.padding)?;
        cx.accumulate_grad(self.weight, g.weight)?;
        cx.accumulate_grad(self.bias, g.bias)?;
        Ok(vec![g.input])
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct InstanceNormOp {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl InstanceNormOp {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.get_or_init(&format!("{name}.gamma"), &[channels], ones_init(&[channels]))?;
        let beta = store.get_or_init(&format!("{name}.beta"), &[channels], zeros_init(&[channels]))?;
        Ok(InstanceNormOp { gamma, beta })
    }
}

impl<T: Scalar> Op<T> for InstanceNormOp {
    fn kind(&self) -> &'static str {
        "instance_norm"
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        expect_inputs("instance_norm", inputs, 1)?;
        Ok(vec![inputs[0].to_vec()])
    }

    fn forward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        let eps = T::from_f64(INSTANCE_NORM_EPS);
        single(kernels::instance_norm(inputs[0], cx.param(self.gamma), cx.param(self.beta), eps)?)
    }

    fn backward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        let eps = T::from_f64(INSTANCE_NORM_EPS);
        let (gx, gg, gb) =
            kernels::instance_norm_backward(inputs[0], cx.param(self.gamma), cx.param(self.beta), &grads[0], eps)?;
        cx.accumulate_grad(self.gamma, gg)?;
        cx.accumulate_grad(self.beta, gb)?;
        Ok(vec![gx])
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}

macro_rules! same_shape_unary {
    () => {
        fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
            expect_inputs(<Self as Op<T>>::kind(self), inputs, 1)?;
            Ok(vec![inputs[0].to_vec()])
        }
    };
}

#[derive(Debug, Clone, Copy)]
pub struct LeakyReluOp {
    pub slope: f64,
}

impl Default for LeakyReluOp {
    fn default() -> Self {
        LeakyReluOp { slope: LEAKY_RELU_SLOPE }
    }
}

impl<T: Scalar> Op<T> for LeakyReluOp {
    fn kind(&self) -> &'static str {
        "leaky_relu"
    }

    same_shape_unary!();

    fn forward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        single(kernels::leaky_relu(inputs[0], T::from_f64(self.slope)))
    }

    fn backward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        Ok(vec![kernels::leaky_relu_backward(inputs[0], &grads[0], T::from_f64(self.slope))?])
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SoftmaxOp;

impl<T: Scalar> Op<T> for SoftmaxOp {
    fn kind(&self) -> &'static str {
        "softmax"
    }

    same_shape_unary!();

    fn forward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        single(kernels::softmax_channels(inputs[0])?)
    }

    fn backward(
        &self,
        _cx: &mut Context<'_, T>,
        _inputs: &[&Tensor<T>],
        outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        Ok(vec![kernels::softmax_channels_backward(outputs[0], &grads[0])?])
    }
}

/// Elementwise sum of two equally shaped values.
#[derive(Debug, Clone, Copy, Default)]
pub struct AddOp;

impl<T: Scalar> Op<T> for AddOp {
    fn kind(&self) -> &'static str {
        "add"
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        expect_inputs("add", inputs, 2)?;
        if inputs[0] != inputs[1] {
            return Err(Error::ShapeMismatch { left: inputs[0].to_vec(), right: inputs[1].to_vec() });
        }
        Ok(vec![inputs[0].to_vec()])
    }

    fn forward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        single(add(inputs[0], inputs[1])?)
    }

    fn backward(
        &self,
        _cx: &mut Context<'_, T>,
        _inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        Ok(vec![grads[0].clone(), grads[0].clone()])
    }
}

fn resample_shape(
    op: &'static str,
    inputs: &[&[usize]],
    f: impl Fn(usize) -> Option<usize>,
) -> Result<Vec<Vec<usize>>> {
    expect_inputs(op, inputs, 1)?;
    let s = inputs[0];
    if s.len() != 5 {
        return Err(Error::arg(op, format!("expected a 5-D input, got {s:?}")));
    }
    let mut out = s.to_vec();
    for e in &mut out[2..] {
        *e = f(*e).ok_or_else(|| Error::arg(op, format!("spatial extents {:?} do not fit", &s[2..])))?;
    }
    Ok(vec![out])
}

/// Non-overlapping max pooling. Not invertible.
#[derive(Debug, Clone, Copy)]
pub struct MaxPoolOp {
    pub window: usize,
}

impl<T: Scalar> Op<T> for MaxPoolOp {
    fn kind(&self) -> &'static str {
        "maxpool3d"
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        let w = self.window;
        resample_shape("maxpool3d", inputs, |e| (w > 0 && e % w == 0).then(|| e / w))
    }

    fn forward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        single(kernels::maxpool3d(inputs[0], self.window)?)
    }

    fn backward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        Ok(vec![kernels::maxpool3d_backward(inputs[0], &grads[0], self.window)?])
    }
}

/// Trilinear upsampling. Not invertible.
#[derive(Debug, Clone, Copy)]
pub struct TrilinearOp {
    pub factor: usize,
}

impl<T: Scalar> Op<T> for TrilinearOp {
    fn kind(&self) -> &'static str {
        "trilinear_upsample"
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        let f = self.factor;
        resample_shape("trilinear_upsample", inputs, |e| (f > 0).then(|| e * f))
    }

    fn forward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        single(kernels::trilinear_upsample(inputs[0], self.factor)?)
    }

    fn backward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        Ok(vec![kernels::trilinear_upsample_backward(inputs[0].shape(), &grads[0], self.factor)?])
    }
}

/// Channel split into `[0, at)` and `[at, C)`; its inverse is concatenation.
#[derive(Debug, Clone, Copy)]
pub struct SplitOp {
    pub at: usize,
}

impl<T: Scalar> Op<T> for SplitOp {
    fn kind(&self) -> &'static str {
        "split_channels"
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        expect_inputs("split_channels", inputs, 1)?;
        let s = inputs[0];
        if s.len() < 2 || self.at == 0 || self.at >= s[1] {
            return Err(Error::arg("split_channels", format!("split point {} does not fit {s:?}", self.at)));
        }
        let (mut a, mut b) = (s.to_vec(), s.to_vec());
        a[1] = self.at;
        b[1] = s[1] - self.at;
        Ok(vec![a, b])
    }

    fn forward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        let (a, b) = split_channels(inputs[0], self.at)?;
        Ok((vec![a, b], Vec::new()))
    }

    fn backward(
        &self,
        _cx: &mut Context<'_, T>,
        _inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        Ok(vec![concat_channels(&grads[0], &grads[1])?])
    }

    fn is_invertible(&self) -> bool {
        true
    }

    fn inverse(&self, _cx: &mut Context<'_, T>, outputs: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Ok(vec![concat_channels(outputs[0], outputs[1])?])
    }
}

/// Channel concatenation whose first part has `at` channels; undone by a split.
#[derive(Debug, Clone, Copy)]
pub struct ConcatOp {
    pub at: usize,
}

impl<T: Scalar> Op<T> for ConcatOp {
    fn kind(&self) -> &'static str {
        "concat_channels"
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        expect_inputs("concat_channels", inputs, 2)?;
        let (a, b) = (inputs[0], inputs[1]);
        if a.len() < 2 || a.len() != b.len() || a[0] != b[0] || a[2..] != b[2..] || a[1] != self.at {
            return Err(Error::ShapeMismatch { left: a.to_vec(), right: b.to_vec() });
        }
        let mut out = a.to_vec();
        out[1] += b[1];
        Ok(vec![out])
    }

    fn forward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        single(concat_channels(inputs[0], inputs[1])?)
    }

    fn backward(
        &self,
        _cx: &mut Context<'_, T>,
        _inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        let (a, b) = split_channels(&grads[0], self.at)?;
        Ok(vec![a, b])
    }

    fn is_invertible(&self) -> bool {
        true
    }

    fn inverse(&self, _cx: &mut Context<'_, T>, outputs: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let (a, b) = split_channels(outputs[0], self.at)?;
        Ok(vec![a, b])
    }
}

/// Fully connected layer on `[N, in]`.
#[derive(Debug, Clone)]
pub struct LinearOp {
    pub weight: ParamId,
    pub bias: ParamId,
    pub out_features: usize,
}

impl LinearOp {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, fin: usize, fout: usize) -> Result<Self> {
        let shape = [fout, fin];
        let weight = store.get_or_init(&format!("{name}.weight"), &shape, he_normal(&shape, fin))?;
        let bias = store.get_or_init(&format!("{name}.bias"), &[fout], zeros_init(&[fout]))?;
        Ok(LinearOp { weight, bias, out_features: fout })
    }
}

impl<T: Scalar> Op<T> for LinearOp {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        expect_inputs("linear", inputs, 1)?;
        match inputs[0] {
            [n, _] => Ok(vec![vec![*n, self.out_features]]),
            s => Err(Error::arg("linear", format!("expected [N, features], got {s:?}"))),
        }
    }

    fn forward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        single(kernels::linear(inputs[0], cx.param(self.weight), cx.param(self.bias))?)
    }

    fn backward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        let (gx, gw, gb) = kernels::linear_backward(inputs[0], cx.param(self.weight), cx.param(self.bias), &grads[0])?;
        cx.accumulate_grad(self.weight, gw)?;
        cx.accumulate_grad(self.bias, gb)?;
        Ok(vec![gx])
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

/// Spatial mean `[N, C, ..] → [N, C]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GapOp;

impl<T: Scalar> Op<T> for GapOp {
    fn kind(&self) -> &'static str {
        "global_avg_pool"
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        expect_inputs("global_avg_pool", inputs, 1)?;
        let s = inputs[0];
        if s.len() < 3 {
            return Err(Error::arg("global_avg_pool", format!("expected spatial axes, got {s:?}")));
        }
        Ok(vec![s[..2].to_vec()])
    }

    fn forward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        single(kernels::global_avg_pool(inputs[0])?)
    }

    fn backward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        Ok(vec![kernels::global_avg_pool_backward(inputs[0].shape(), &grads[0])?])
    }
}

/// Reinterprets the data under a new shape with the same element count.
#[derive(Debug, Clone)]
pub struct ReshapeOp {
    pub shape: Vec<usize>,
}

impl<T: Scalar> Op<T> for ReshapeOp {
    fn kind(&self) -> &'static str {
        "reshape"
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        expect_inputs("reshape", inputs, 1)?;
        if inputs[0].iter().product::<usize>() != self.shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch { left: inputs[0].to_vec(), right: self.shape.clone() });
        }
        Ok(vec![self.shape.clone()])
    }

    fn forward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        single(inputs[0].clone().reshape(&self.shape)?)
    }

    fn backward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        Ok(vec![grads[0].clone().reshape(inputs[0].shape())?])
    }
}

/// Reparameterized sample `z = μ + exp(logvar / 2) · ε` from inputs `(μ, logvar, ε)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReparamOp;

impl<T: Scalar> Op<T> for ReparamOp {
    fn kind(&self) -> &'static str {
        "reparameterize"
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        expect_inputs("reparameterize", inputs, 3)?;
        if inputs[0] != inputs[1] || inputs[0] != inputs[2] {
            return Err(Error::ShapeMismatch { left: inputs[0].to_vec(), right: inputs[1].to_vec() });
        }
        Ok(vec![inputs[0].to_vec()])
    }

    fn forward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        let half = T::from_f64(0.5);
        let data = (inputs[0].data().iter().zip(inputs[1].data()).zip(inputs[2].data()))
            .map(|((&m, &lv), &e)| m + (lv * half).exp() * e)
            .collect();
        single(Tensor::from_parts(inputs[0].shape().to_vec(), data))
    }

    fn backward(
        &self,
        _cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        let half = T::from_f64(0.5);
        let g = &grads[0];
        let sigma: Vec<T> = inputs[1].data().iter().map(|&lv| (lv * half).exp()).collect();
        let shape = inputs[0].shape().to_vec();
        let glv = (g.data().iter().zip(&sigma).zip(inputs[2].data())).map(|((&g, &s), &e)| g * e * s * half).collect();
        let geps = g.data().iter().zip(&sigma).map(|(&g, &s)| g * s).collect();
        Ok(vec![g.clone(), Tensor::from_parts(shape.clone(), glv), Tensor::from_parts(shape, geps)])
    }
}
