use alloc::vec;
use alloc::vec::Vec;

use super::context::Context;
use super::param::ParamId;
use super::tape::Tape;
use crate::{Error, Result, Scalar, Tensor};

/// Internal state an op keeps between forward and backward: the recorded
/// sub-tapes of composite layers. Primitive ops save nothing.
pub type Saved<T> = Vec<Tape<T>>;

/// Reconstructed inputs paired with their gradients.
pub type Reconstructed<T> = (Vec<Tensor<T>>, Vec<Tensor<T>>);

/// A differentiable node kernel.
///
/// `forward` runs with `save = true` when the tape expects to call `backward`
/// with the returned state; with `save = false` the op must not record
/// anything and `backward` receives an empty state.
pub trait Op<T: Scalar>: Send + Sync {
    fn kind(&self) -> &'static str;

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>>;

    fn forward(&self, cx: &mut Context<'_, T>, inputs: &[&Tensor<T>], save: bool)
        -> Result<(Vec<Tensor<T>>, Saved<T>)>;

    /// Gradients with respect to every input; parameter gradients go to `cx`.
    fn backward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        outputs: &[&Tensor<T>],
        saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>>;

    fn is_invertible(&self) -> bool {
        false
    }

    fn inverse(&self, _cx: &mut Context<'_, T>, _outputs: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Err(Error::NotInvertible(self.kind()))
    }

    /// Reconstructs the inputs from the outputs and back-propagates in one go.
    /// Returns `(inputs, input_grads)`.
    fn inverse_backward(
        &self,
        cx: &mut Context<'_, T>,
        outputs: &[&Tensor<T>],
        grads: &[Tensor<T>],
    ) -> Result<Reconstructed<T>> {
        let inputs = self.inverse(cx, outputs)?;
        let refs: Vec<&Tensor<T>> = inputs.iter().collect();
        let g = self.backward(cx, &refs, outputs, Vec::new(), grads)?;
        Ok((inputs, g))
    }

    /// Forward evaluations that one `inverse_backward` costs.
    fn inverse_evaluations(&self) -> usize {
        1
    }

    fn params(&self) -> Vec<ParamId> {
        Vec::new()
    }
}

pub(crate) fn single<T>(t: Tensor<T>) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
    Ok((vec![t], Vec::new()))
}

pub(crate) fn expect_inputs(kind: &'static str, inputs: &[&[usize]], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::arg(kind, alloc::format!("expected {n} inputs, got {}", inputs.len())));
    }
    Ok(())
}
