use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::mem;
use core::ops::Range;

use super::context::Context;
use super::graph::{zeros_for, Graph};
use super::op::Saved;
use crate::{Error, Result, Scalar, Tensor};

/// Activation-storage regime applied to a whole graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoragePolicy {
    /// Keep every activation (naive backprop).
    Store,
    /// Drop the inputs of invertible nodes and rebuild them from outputs.
    Invertible,
    /// Keep only segment boundaries and recompute each segment during backward.
    /// `None` uses segments of `ceil(sqrt(L))` nodes.
    Checkpoint { segment_len: Option<usize> },
}

impl StoragePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            StoragePolicy::Store => "store",
            StoragePolicy::Invertible => "invertible",
            StoragePolicy::Checkpoint { .. } => "checkpoint",
        }
    }
}

impl core::str::FromStr for StoragePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "store" | "naive" => Ok(StoragePolicy::Store),
            "invertible" => Ok(StoragePolicy::Invertible),
            "checkpoint" => Ok(StoragePolicy::Checkpoint { segment_len: None }),
            other => Err(Error::arg("StoragePolicy", format!("unknown policy `{other}`"))),
        }
    }
}

/// What a single node keeps for its backward step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodePolicy {
    StoreOutput,
    RecomputeFromInverse,
    /// Last node of a checkpoint segment.
    CheckpointBoundary,
    RecomputeFromCheckpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Ready,
    Forwarded,
    Consumed,
}

#[derive(Debug, Clone, Copy)]
struct Checksum {
    sum: f64,
    sumsq: f64,
    sumabs: f64,
}

impl Checksum {
    fn of<T: Scalar>(t: &Tensor<T>) -> Self {
        let (mut sum, mut sumsq, mut sumabs) = (0.0, 0.0, 0.0);
        for v in t.data() {
            let v = v.as_f64();
            sum += v;
            sumsq += v * v;
            sumabs += v.abs();
        }
        Checksum { sum, sumsq, sumabs }
    }

    fn relative_error(&self, other: &Checksum) -> f64 {
        let scale = self.sumabs.max(f64::MIN_POSITIVE);
        let a = (self.sum - other.sum).abs() / scale;
        let b = (self.sumsq - other.sumsq).abs() / self.sumsq.max(f64::MIN_POSITIVE);
        a.max(b)
    }
}

const INVERSE_TOLERANCE: f64 = 1e-8;

/// One execution of a [`Graph`]: the resident activations plus the per-node
/// state needed to run backward once under a [`StoragePolicy`].
///
/// The tape charges every activation it keeps for backward to the context's
/// meter and releases it again once backward no longer needs it.
#[derive(Debug)]
pub struct Tape<T> {
    inference: bool,
    policy: StoragePolicy,
    node_policy: Vec<NodePolicy>,
    retain: Vec<bool>,
    segments: Vec<Range<usize>>,
    values: Vec<Option<Tensor<T>>>,
    charged: Vec<Option<usize>>,
    checksums: Vec<Option<Checksum>>,
    saved: Vec<Saved<T>>,
    state: State,
    top: bool,
}

impl<T: Scalar> Tape<T> {
    pub fn new(graph: &Graph<T>, policy: StoragePolicy) -> Self {
        let n_nodes = graph.nodes.len();
        let n_values = graph.values.len();
        let mut node_policy = vec![NodePolicy::StoreOutput; n_nodes];
        let mut retain = vec![true; n_values];
        let mut segments = Vec::new();
        match policy {
            StoragePolicy::Store => {}
            StoragePolicy::Invertible => {
                for (p, node) in node_policy.iter_mut().zip(&graph.nodes) {
                    if node.op.is_invertible() {
                        *p = NodePolicy::RecomputeFromInverse;
                    }
                }
                for (r, info) in retain.iter_mut().zip(&graph.values) {
                    if let Some(last) = info.last_consumer() {
                        *r = info.is_output || !graph.nodes[last].op.is_invertible();
                    }
                }
            }
            StoragePolicy::Checkpoint { segment_len } => {
                let len = segment_len.unwrap_or_else(|| ceil_sqrt(n_nodes)).max(1);
                let mut start = 0;
                while start < n_nodes {
                    let end = (start + len).min(n_nodes);
                    segments.push(start..end);
                    node_policy[end - 1] = NodePolicy::CheckpointBoundary;
                    for p in &mut node_policy[start..end - 1] {
                        *p = NodePolicy::RecomputeFromCheckpoint;
                    }
                    start = end;
                }
                let seg = |node: usize| node / len;
                for (r, info) in retain.iter_mut().zip(&graph.values) {
                    *r = match info.producer {
                        None => true,
                        Some(p) => info.is_output || info.consumers.iter().any(|&c| seg(c) != seg(p)),
                    };
                }
            }
        }
        Tape {
            inference: false,
            policy,
            node_policy,
            retain,
            segments,
            values: (0..n_values).map(|_| None).collect(),
            charged: vec![None; n_values],
            checksums: vec![None; n_values],
            saved: (0..n_nodes).map(|_| Vec::new()).collect(),
            state: State::Ready,
            top: false,
        }
    }

    /// A forward-only tape that keeps nothing beyond what the next node needs.
    pub fn inference(graph: &Graph<T>) -> Self {
        let mut tape = Tape::new(graph, StoragePolicy::Store);
        tape.inference = true;
        tape.retain.iter_mut().for_each(|r| *r = false);
        tape
    }

    pub fn policy(&self) -> StoragePolicy {
        self.policy
    }

    pub fn node_policies(&self) -> &[NodePolicy] {
        &self.node_policy
    }

    /// Whether the value with this index is kept for backward.
    pub fn retains(&self, value: usize) -> bool {
        self.retain[value]
    }

    /// Number of activation scalars this tape currently holds for backward.
    pub fn resident_scalars(&self) -> usize {
        let own: usize = self
            .values
            .iter()
            .zip(&self.charged)
            .filter(|(_, c)| c.is_some())
            .filter_map(|(v, _)| v.as_ref())
            .map(Tensor::len)
            .sum();
        own + self.saved.iter().flatten().map(Tape::resident_scalars).sum::<usize>()
    }

    fn check_graph(&self, graph: &Graph<T>) -> Result<()> {
        if graph.values.len() != self.values.len() || graph.nodes.len() != self.saved.len() {
            return Err(Error::arg("Tape", "tape was built for a different graph"));
        }
        Ok(())
    }

    fn charge(&mut self, cx: &mut Context<'_, T>, v: usize, owner: usize) {
        if let Some(t) = &self.values[v] {
            cx.meter.charge(owner, t.len());
            self.charged[v] = Some(owner);
        }
    }

    fn release(&mut self, cx: &mut Context<'_, T>, v: usize) {
        if let Some(t) = self.values[v].take() {
            if let Some(owner) = self.charged[v].take() {
                cx.meter.release(owner, t.len());
            }
        }
    }

    fn value_owner(&self, cx: &Context<'_, T>, producer: Option<usize>) -> usize {
        match (self.top, producer) {
            (true, Some(p)) => p,
            (true, None) => cx.meter.input_owner(),
            (false, _) => cx.owner,
        }
    }

    /// Runs the graph. Returns the graph outputs; a training tape keeps its
    /// own copy of them for backward.
    pub fn forward(
        &mut self,
        graph: &Graph<T>,
        cx: &mut Context<'_, T>,
        inputs: Vec<Tensor<T>>,
    ) -> Result<Vec<Tensor<T>>> {
        self.check_graph(graph)?;
        if self.state != State::Ready {
            return Err(Error::arg("Tape::forward", "tape has already run forward"));
        }
        self.top = cx.depth == 0;
        if self.top && !self.inference {
            cx.meter.register_owners(graph.nodes.iter().map(|n| n.name.clone()));
        }
        let outer_owner = cx.owner;
        cx.depth += 1;
        let result = self.forward_inner(graph, cx, inputs);
        cx.depth -= 1;
        cx.owner = outer_owner;
        result
    }

    fn forward_inner(
        &mut self,
        graph: &Graph<T>,
        cx: &mut Context<'_, T>,
        inputs: Vec<Tensor<T>>,
    ) -> Result<Vec<Tensor<T>>> {
        if inputs.len() != graph.inputs.len() {
            return Err(Error::arg(
                "Tape::forward",
                format!("expected {} inputs, got {}", graph.inputs.len(), inputs.len()),
            ));
        }
        for (&v, t) in graph.inputs.iter().zip(inputs) {
            let info = &graph.values[v.0];
            if t.shape() != info.shape.as_slice() {
                return Err(
                    Error::ShapeMismatch { left: t.shape().to_vec(), right: info.shape.clone() }.at_node(&info.name)
                );
            }
            self.values[v.0] = Some(t);
            if self.retain[v.0] {
                let owner = self.value_owner(cx, None);
                self.charge(cx, v.0, owner);
            }
        }
        for (i, node) in graph.nodes.iter().enumerate() {
            if self.top {
                cx.owner = i;
            }
            let save = !self.inference && self.node_policy[i] == NodePolicy::StoreOutput;
            let (outs, saved) = {
                let ins = self.gather(graph, &node.inputs)?;
                node.op.forward(cx, &ins, save).map_err(|e| e.at_node(&node.name))?
            };
            if outs.len() != node.outputs.len() {
                return Err(Error::arg(
                    "Tape::forward",
                    format!("op returned {} outputs, expected {}", outs.len(), node.outputs.len()),
                )
                .at_node(&node.name));
            }
            self.saved[i] = saved;
            for (&o, t) in node.outputs.iter().zip(outs) {
                let info = &graph.values[o.0];
                if t.shape() != info.shape.as_slice() {
                    return Err(Error::ShapeMismatch { left: t.shape().to_vec(), right: info.shape.clone() }
                        .at_node(&node.name));
                }
                self.values[o.0] = Some(t);
                if self.retain[o.0] {
                    let owner = self.value_owner(cx, Some(i));
                    self.charge(cx, o.0, owner);
                }
            }
            for &v in node.inputs.iter().chain(&node.outputs) {
                let info = &graph.values[v.0];
                let done = info.last_consumer().is_none_or(|c| c == i);
                if done && !self.retain[v.0] && !info.is_output && self.values[v.0].is_some() {
                    if cx.inverse_guard && !self.inference {
                        self.checksums[v.0] = self.values[v.0].as_ref().map(Checksum::of);
                    }
                    self.values[v.0] = None;
                }
            }
        }
        self.state = State::Forwarded;
        if self.inference {
            graph.outputs.iter().map(|v| self.values[v.0].take().ok_or_else(|| missing(graph, v.0))).collect()
        } else {
            graph.outputs.iter().map(|v| self.values[v.0].clone().ok_or_else(|| missing(graph, v.0))).collect()
        }
    }

    fn gather<'a>(&'a self, graph: &Graph<T>, ids: &[super::graph::ValueId]) -> Result<Vec<&'a Tensor<T>>> {
        ids.iter().map(|v| self.values[v.0].as_ref().ok_or_else(|| missing(graph, v.0))).collect()
    }

    /// Back-propagates `output_grads` (one per graph output) and returns the
    /// gradients of the graph inputs. Parameter gradients accumulate in `cx`.
    pub fn backward(
        &mut self,
        graph: &Graph<T>,
        cx: &mut Context<'_, T>,
        output_grads: Vec<Tensor<T>>,
    ) -> Result<Vec<Tensor<T>>> {
        self.check_graph(graph)?;
        match self.state {
            State::Ready => return Err(Error::BackwardBeforeForward),
            State::Consumed => return Err(Error::TapeConsumed),
            State::Forwarded if self.inference => {
                return Err(Error::arg("Tape::backward", "inference tapes keep no activations"))
            }
            State::Forwarded => {}
        }
        if output_grads.len() != graph.outputs.len() {
            return Err(Error::arg(
                "Tape::backward",
                format!("expected {} output gradients, got {}", graph.outputs.len(), output_grads.len()),
            ));
        }
        self.state = State::Consumed;
        let outer_owner = cx.owner;
        cx.depth += 1;
        let result = self.backward_inner(graph, cx, output_grads);
        cx.depth -= 1;
        cx.owner = outer_owner;
        if result.is_err() {
            self.discard(cx);
        }
        result
    }

    fn backward_inner(
        &mut self,
        graph: &Graph<T>,
        cx: &mut Context<'_, T>,
        output_grads: Vec<Tensor<T>>,
    ) -> Result<Vec<Tensor<T>>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..graph.values.len()).map(|_| None).collect();
        for (&v, g) in graph.outputs.iter().zip(output_grads) {
            accumulate(&mut grads[v.0], g, &graph.values[v.0].shape)?;
        }
        if self.segments.is_empty() {
            for i in (0..graph.nodes.len()).rev() {
                self.backprop_node(graph, cx, i, &mut grads)?;
            }
        } else {
            for seg in mem::take(&mut self.segments).into_iter().rev() {
                self.recompute_segment(graph, cx, seg.clone())?;
                for i in seg.rev() {
                    self.backprop_node(graph, cx, i, &mut grads)?;
                }
            }
        }
        let out = graph
            .inputs
            .iter()
            .map(|v| grads[v.0].take().unwrap_or_else(|| zeros_for(&graph.values[v.0].shape)))
            .collect();
        for v in 0..self.values.len() {
            self.release(cx, v);
        }
        Ok(out)
    }

    fn recompute_segment(&mut self, graph: &Graph<T>, cx: &mut Context<'_, T>, seg: Range<usize>) -> Result<()> {
        for i in seg {
            let node = &graph.nodes[i];
            if self.top {
                cx.owner = i;
            }
            let (outs, saved) = {
                let ins = self.gather(graph, &node.inputs).map_err(|e| e.at_node(&node.name))?;
                node.op.forward(cx, &ins, true).map_err(|e| e.at_node(&node.name))?
            };
            cx.meter.recomputes += 1;
            self.saved[i] = saved;
            for (&o, t) in node.outputs.iter().zip(outs) {
                if self.values[o.0].is_none() {
                    self.values[o.0] = Some(t);
                    let owner = self.value_owner(cx, Some(i));
                    self.charge(cx, o.0, owner);
                }
            }
        }
        Ok(())
    }

    fn backprop_node(
        &mut self,
        graph: &Graph<T>,
        cx: &mut Context<'_, T>,
        i: usize,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let node = &graph.nodes[i];
        if self.top {
            cx.owner = i;
        }
        let invertible = self.node_policy[i] == NodePolicy::RecomputeFromInverse;
        let needs_inputs = invertible && node.inputs.iter().any(|v| self.values[v.0].is_none());
        let has_grad = node.outputs.iter().any(|v| grads[v.0].is_some());
        if !has_grad && !needs_inputs {
            self.discard_saved(cx, i);
            for &o in &node.outputs {
                self.release(cx, o.0);
            }
            return Ok(());
        }
        let gouts: Vec<Tensor<T>> = node
            .outputs
            .iter()
            .map(|v| grads[v.0].take().unwrap_or_else(|| zeros_for(&graph.values[v.0].shape)))
            .collect();
        let gins = if invertible {
            let (ins, gins) = {
                let outs = self.gather(graph, &node.outputs).map_err(|e| e.at_node(&node.name))?;
                if has_grad {
                    node.op.inverse_backward(cx, &outs, &gouts)
                } else {
                    node.op.inverse(cx, &outs).map(|ins| (ins, Vec::new()))
                }
                .map_err(|e| e.at_node(&node.name))?
            };
            cx.meter.recomputes += node.op.inverse_evaluations();
            for (&v, t) in node.inputs.iter().zip(ins) {
                if self.values[v.0].is_some() {
                    continue;
                }
                if let Some(expected) = self.checksums[v.0].take() {
                    let rel = expected.relative_error(&Checksum::of(&t));
                    if rel.is_nan() || rel > INVERSE_TOLERANCE {
                        return Err(Error::InverseDiverged { value: graph.values[v.0].name.to_string(), rel }
                            .at_node(&node.name));
                    }
                }
                self.values[v.0] = Some(t);
                let owner = self.value_owner(cx, graph.values[v.0].producer);
                self.charge(cx, v.0, owner);
            }
            gins
        } else {
            let saved = mem::take(&mut self.saved[i]);
            let ins = self.gather(graph, &node.inputs).map_err(|e| e.at_node(&node.name))?;
            let outs = self.gather(graph, &node.outputs).map_err(|e| e.at_node(&node.name))?;
            node.op.backward(cx, &ins, &outs, saved, &gouts).map_err(|e| e.at_node(&node.name))?
        };
        if has_grad {
            if gins.len() != node.inputs.len() {
                return Err(Error::arg("Tape::backward", format!("op returned {} input gradients", gins.len()))
                    .at_node(&node.name));
            }
            for (&v, g) in node.inputs.iter().zip(gins) {
                accumulate(&mut grads[v.0], g, &graph.values[v.0].shape).map_err(|e| e.at_node(&node.name))?;
            }
        }
        self.discard_saved(cx, i);
        for &o in &node.outputs {
            self.release(cx, o.0);
        }
        Ok(())
    }

    fn discard_saved(&mut self, cx: &mut Context<'_, T>, i: usize) {
        for mut t in mem::take(&mut self.saved[i]) {
            t.discard(cx);
        }
    }

    /// Releases everything this tape holds without running backward.
    pub fn discard(&mut self, cx: &mut Context<'_, T>) {
        for i in 0..self.saved.len() {
            self.discard_saved(cx, i);
        }
        for v in 0..self.values.len() {
            self.release(cx, v);
        }
        self.state = State::Consumed;
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>, shape: &[usize]) -> Result<()> {
    if g.shape() != shape {
        return Err(Error::ShapeMismatch { left: g.shape().to_vec(), right: shape.to_vec() });
    }
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn missing<T: Scalar>(graph: &Graph<T>, v: usize) -> Error {
    Error::MissingActivation(graph.values[v].name.clone())
}

fn ceil_sqrt(n: usize) -> usize {
    let mut r = 0;
    while r * r < n {
        r += 1;
    }
    r
}
