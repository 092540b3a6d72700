//! Reverse-mode differentiation over a static graph.
//!
//! A [`Graph`] is built once per input shape with [`GraphBuilder`]; each
//! training step runs it on a fresh [`Tape`] whose [`StoragePolicy`] decides
//! which activations stay resident for backward. Invertible nodes can drop
//! their inputs and rebuild them from their outputs, checkpointing keeps only
//! segment boundaries, and `Store` keeps everything. A logarithmic
//! (recursive) checkpoint schedule is not provided.
//!
//! The [`Meter`] in the [`Context`] counts activation scalars held for
//! backward, including values reconstructed or recomputed during backward and
//! those held inside composite layers. Gradients, parameters and short-lived
//! kernel buffers are not counted.

mod context;
mod graph;
mod memory;
mod op;
mod param;
mod tape;

use alloc::vec::Vec;

pub use context::Context;
pub use graph::{Graph, GraphBuilder, Node, Section, ValueId};
pub use memory::{MemoryReport, Meter};
pub(crate) use op::{expect_inputs, single};
pub use op::{Op, Reconstructed, Saved};
pub use param::{Grads, ParamId, ParamStore};
pub use tape::{NodePolicy, StoragePolicy, Tape};

use crate::{Result, Scalar, Tensor};

/// Result of one metered forward+backward pass.
pub struct Pass<T> {
    pub outputs: Vec<Tensor<T>>,
    pub input_grads: Vec<Tensor<T>>,
    pub grads: Grads<T>,
    pub report: MemoryReport,
}

/// Runs forward and backward under `policy`, seeding every output with a
/// gradient of ones, and reports the activation memory of the pass.
pub fn profile_memory<T: Scalar>(
    graph: &Graph<T>,
    params: &ParamStore<T>,
    policy: StoragePolicy,
    inputs: Vec<Tensor<T>>,
) -> Result<MemoryReport> {
    let seeds = graph.output_shapes().iter().map(|s| Tensor::full(s, T::one())).collect::<Result<Vec<_>>>()?;
    Ok(run_pass(graph, params, policy, inputs, seeds, false)?.report)
}

/// Forward+backward with explicit output gradients.
pub fn run_pass<T: Scalar>(
    graph: &Graph<T>,
    params: &ParamStore<T>,
    policy: StoragePolicy,
    inputs: Vec<Tensor<T>>,
    output_grads: Vec<Tensor<T>>,
    inverse_guard: bool,
) -> Result<Pass<T>> {
    let mut cx = Context::new(params).with_inverse_guard(inverse_guard);
    let mut tape = Tape::new(graph, policy);
    let outputs = tape.forward(graph, &mut cx, inputs)?;
    let input_grads = tape.backward(graph, &mut cx, output_grads)?;
    let report = cx.memory_report();
    Ok(Pass { outputs, input_grads, grads: cx.into_grads(), report })
}
