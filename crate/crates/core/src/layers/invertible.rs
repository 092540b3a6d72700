use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{expect_inputs, single, Context, Op, ParamId, ParamStore, Saved};
use crate::kernels::{channel_mix, channel_mix_backward, invert_matrix, orthogonal_matrix};
use crate::tensor::{pixel_shuffle3d, pixel_unshuffle3d};
use crate::{Error, Result, Scalar, Tensor};

/// Space-to-channel rearrangement (factor 2 per axis) followed by the
/// channel mixing `M`: `[N,C,D,H,W] → [N,8C,D/2,H/2,W/2]`.
pub fn invertible_downsample<T: Scalar>(x: &Tensor<T>, mix: &Tensor<T>) -> Result<Tensor<T>> {
    channel_mix(&pixel_unshuffle3d(x, 2)?, mix)
}

/// Exact inverse of [`invertible_downsample`] for the same `M`.
pub fn invertible_upsample<T: Scalar>(y: &Tensor<T>, mix: &Tensor<T>) -> Result<Tensor<T>> {
    pixel_shuffle3d(&channel_mix(y, &invert_matrix(mix, "mix")?)?, 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

/// Learnable invertible resampling. `Down` is unshuffle then mix; `Up` is
/// mix then shuffle, each with its own square mixing matrix.
#[derive(Debug, Clone)]
pub struct InvertibleResampleOp {
    pub mix: ParamId,
    pub direction: Direction,
    /// Channel count of the mixed (low-resolution) side.
    pub channels: usize,
}

impl InvertibleResampleOp {
    /// `channels` is the channel count on the low-resolution side (8× the
    /// full-resolution side). The matrix `{name}.mix` starts orthogonal.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        direction: Direction,
        channels: usize,
    ) -> Result<Self> {
        if !channels.is_multiple_of(8) {
            return Err(Error::arg(
                "invertible_resample",
                format!("{channels} low-resolution channels is not a multiple of 8"),
            ));
        }
        let mix =
            store.get_or_init(&format!("{name}.mix"), &[channels, channels], |rng| orthogonal_matrix(channels, rng))?;
        Ok(InvertibleResampleOp { mix, direction, channels })
    }
}

impl<T: Scalar> Op<T> for InvertibleResampleOp {
    fn kind(&self) -> &'static str {
        match self.direction {
            Direction::Down => "invertible_downsample",
            Direction::Up => "invertible_upsample",
        }
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        expect_inputs("invertible_resample", inputs, 1)?;
        let s = inputs[0];
        let bad =
            || Error::arg("invertible_resample", format!("input {s:?} does not fit {} mixed channels", self.channels));
        if s.len() != 5 {
            return Err(bad());
        }
        let mut out = s.to_vec();
        match self.direction {
            Direction::Down => {
                if s[1] * 8 != self.channels || s[2..].iter().any(|e| e % 2 != 0) {
                    return Err(bad());
                }
                out[1] = self.channels;
                out[2..].iter_mut().for_each(|e| *e /= 2);
            }
            Direction::Up => {
                if s[1] != self.channels {
                    return Err(bad());
                }
                out[1] = self.channels / 8;
                out[2..].iter_mut().for_each(|e| *e *= 2);
            }
        }
        Ok(vec![out])
    }

    fn forward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        let m = cx.param(self.mix);
        single(match self.direction {
            Direction::Down => channel_mix(&pixel_unshuffle3d(inputs[0], 2)?, m)?,
            Direction::Up => pixel_shuffle3d(&channel_mix(inputs[0], m)?, 2)?,
        })
    }

    fn backward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        _saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        let m = cx.param(self.mix);
        let (gx, gm) = match self.direction {
            Direction::Down => {
                let (gu, gm) = channel_mix_backward(&pixel_unshuffle3d(inputs[0], 2)?, m, &grads[0])?;
                (pixel_shuffle3d(&gu, 2)?, gm)
            }
            Direction::Up => channel_mix_backward(inputs[0], m, &pixel_unshuffle3d(&grads[0], 2)?)?,
        };
        cx.accumulate_grad(self.mix, gm)?;
        Ok(vec![gx])
    }

    fn is_invertible(&self) -> bool {
        true
    }

    fn inverse(&self, cx: &mut Context<'_, T>, outputs: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let name = cx.params().name(self.mix);
        let inv = invert_matrix(cx.param(self.mix), name)?;
        Ok(vec![match self.direction {
            Direction::Down => pixel_shuffle3d(&channel_mix(outputs[0], &inv)?, 2)?,
            Direction::Up => channel_mix(&pixel_unshuffle3d(outputs[0], 2)?, &inv)?,
        }])
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.mix]
    }
}
