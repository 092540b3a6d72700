use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::context::Context;
use super::op::Op;
use super::param::ParamStore;
use super::tape::Tape;
use crate::{Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub(crate) usize);

/// Which part of a network a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    Stem,
    Trunk,
    Head,
    Vae,
}

pub struct Node<T: Scalar> {
    pub name: String,
    pub op: Box<dyn Op<T>>,
    pub inputs: Vec<ValueId>,
    pub outputs: Vec<ValueId>,
    pub section: Section,
}

#[derive(Debug, Clone)]
pub(crate) struct ValueInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub producer: Option<usize>,
    pub consumers: Vec<usize>,
    pub is_output: bool,
}

impl ValueInfo {
    pub fn last_consumer(&self) -> Option<usize> {
        self.consumers.iter().copied().max()
    }
}

/// Static computation graph with declared shapes. Node order is topological.
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) values: Vec<ValueInfo>,
    pub(crate) inputs: Vec<ValueId>,
    pub(crate) outputs: Vec<ValueId>,
}

impl<T: Scalar> Graph<T> {
    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn inputs(&self) -> &[ValueId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[ValueId] {
        &self.outputs
    }

    pub fn shape(&self, v: ValueId) -> &[usize] {
        &self.values[v.0].shape
    }

    pub fn value_name(&self, v: ValueId) -> &str {
        &self.values[v.0].name
    }

    pub fn input_shapes(&self) -> Vec<Vec<usize>> {
        self.inputs.iter().map(|&v| self.values[v.0].shape.clone()).collect()
    }

    pub fn output_shapes(&self) -> Vec<Vec<usize>> {
        self.outputs.iter().map(|&v| self.values[v.0].shape.clone()).collect()
    }

    /// Inference: nothing is retained and nothing is charged to the meter.
    pub fn evaluate(&self, params: &ParamStore<T>, inputs: Vec<Tensor<T>>) -> Result<Vec<Tensor<T>>> {
        let mut cx = Context::new(params);
        self.evaluate_in(&mut cx, inputs)
    }

    pub fn evaluate_in(&self, cx: &mut Context<'_, T>, inputs: Vec<Tensor<T>>) -> Result<Vec<Tensor<T>>> {
        Tape::inference(self).forward(self, cx, inputs)
    }
}

pub struct GraphBuilder<T: Scalar> {
    graph: Graph<T>,
    section: Section,
}

impl<T: Scalar> Default for GraphBuilder<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GraphBuilder<T> {
    pub fn new() -> Self {
        GraphBuilder {
            graph: Graph { nodes: Vec::new(), values: Vec::new(), inputs: Vec::new(), outputs: Vec::new() },
            section: Section::Trunk,
        }
    }

    pub fn set_section(&mut self, section: Section) {
        self.section = section;
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> ValueId {
        let v = self.new_value(name.to_string(), shape.to_vec(), None);
        self.graph.inputs.push(v);
        v
    }

    pub fn shape(&self, v: ValueId) -> &[usize] {
        &self.graph.values[v.0].shape
    }

    fn new_value(&mut self, name: String, shape: Vec<usize>, producer: Option<usize>) -> ValueId {
        self.graph.values.push(ValueInfo { name, shape, producer, consumers: Vec::new(), is_output: false });
        ValueId(self.graph.values.len() - 1)
    }

    pub fn apply(&mut self, name: &str, op: impl Op<T> + 'static, inputs: &[ValueId]) -> Result<ValueId> {
        let outs = self.apply_multi(name, op, inputs)?;
        match outs.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::arg("GraphBuilder::apply", format!("node `{name}` has {} outputs", outs.len()))),
        }
    }

    pub fn apply_multi(&mut self, name: &str, op: impl Op<T> + 'static, inputs: &[ValueId]) -> Result<Vec<ValueId>> {
        self.apply_boxed(name, Box::new(op), inputs)
    }

    pub fn apply_boxed(&mut self, name: &str, op: Box<dyn Op<T>>, inputs: &[ValueId]) -> Result<Vec<ValueId>> {
        if let Some(v) = inputs.iter().find(|v| v.0 >= self.graph.values.len()) {
            return Err(Error::arg("GraphBuilder::apply", format!("unknown value {v:?}")));
        }
        let shapes: Vec<&[usize]> = inputs.iter().map(|v| self.graph.values[v.0].shape.as_slice()).collect();
        let out_shapes = op.output_shapes(&shapes).map_err(|e| e.at_node(name))?;
        let idx = self.graph.nodes.len();
        for v in inputs {
            self.graph.values[v.0].consumers.push(idx);
        }
        let multi = out_shapes.len() > 1;
        let outputs: Vec<ValueId> = out_shapes
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let vname = if multi { format!("{name}:{i}") } else { name.to_string() };
                self.new_value(vname, s, Some(idx))
            })
            .collect();
        self.graph.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs: inputs.to_vec(),
            outputs: outputs.clone(),
            section: self.section,
        });
        Ok(outputs)
    }

    pub fn output(&mut self, v: ValueId) {
        self.graph.values[v.0].is_output = true;
        self.graph.outputs.push(v);
    }

    pub fn build(self) -> Graph<T> {
        self.graph
    }
}

pub(crate) fn zeros_for<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::from_parts(shape.to_vec(), vec![T::zero(); shape.iter().product()])
}
