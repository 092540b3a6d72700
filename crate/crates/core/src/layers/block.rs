use alloc::vec::Vec;

use crate::autodiff::{Context, Graph, Op, ParamId, Saved, StoragePolicy, Tape};
use crate::{Error, Result, Scalar, Tensor};

/// A sub-graph used as a single node. When the outer tape asks it to save,
/// it records a private tape (all activations kept); otherwise it runs
/// without retaining anything.
pub struct Block<T: Scalar> {
    kind: &'static str,
    graph: Graph<T>,
}

impl<T: Scalar> Block<T> {
    pub fn new(kind: &'static str, graph: Graph<T>) -> Self {
        Block { kind, graph }
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    fn record(&self, cx: &mut Context<'_, T>, inputs: &[&Tensor<T>]) -> Result<(Vec<Tensor<T>>, Tape<T>)> {
        let mut tape = Tape::new(&self.graph, StoragePolicy::Store);
        let outs = tape.forward(&self.graph, cx, inputs.iter().map(|&t| t.clone()).collect())?;
        Ok((outs, tape))
    }
}

impl<T: Scalar> Op<T> for Block<T> {
    fn kind(&self) -> &'static str {
        self.kind
    }

    fn output_shapes(&self, inputs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        let expected = self.graph.input_shapes();
        if inputs.len() != expected.len() {
            return Err(Error::arg(
                "block",
                alloc::format!("expected {} inputs, got {}", expected.len(), inputs.len()),
            ));
        }
        for (got, want) in inputs.iter().zip(&expected) {
            if *got != want.as_slice() {
                return Err(Error::ShapeMismatch { left: got.to_vec(), right: want.clone() });
            }
        }
        Ok(self.graph.output_shapes())
    }

    fn forward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        save: bool,
    ) -> Result<(Vec<Tensor<T>>, Saved<T>)> {
        if save {
            let (outs, tape) = self.record(cx, inputs)?;
            Ok((outs, alloc::vec![tape]))
        } else {
            let outs = self.graph.evaluate_in(cx, inputs.iter().map(|&t| t.clone()).collect())?;
            Ok((outs, Vec::new()))
        }
    }

    fn backward(
        &self,
        cx: &mut Context<'_, T>,
        inputs: &[&Tensor<T>],
        _outputs: &[&Tensor<T>],
        mut saved: Saved<T>,
        grads: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        let mut tape = match saved.pop() {
            Some(t) => t,
            None => self.record(cx, inputs)?.1,
        };
        tape.backward(&self.graph, cx, grads.to_vec())
    }

    fn params(&self) -> Vec<ParamId> {
        self.graph.nodes().iter().flat_map(|n| n.op.params()).collect()
    }
}
