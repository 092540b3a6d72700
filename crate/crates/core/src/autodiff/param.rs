use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::rng::SeededRng;
use crate::{Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable leaf tensors. Initial values are drawn from a stream keyed
/// by `(seed, name)`, so they do not depend on construction order.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    seed: u64,
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        ParamStore { seed, names: Vec::new(), values: Vec::new(), index: BTreeMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Returns the existing parameter `name` or creates it with `init`.
    /// An existing parameter must have the requested shape.
    pub fn get_or_init(
        &mut self,
        name: &str,
        shape: &[usize],
        init: impl FnOnce(&mut SeededRng) -> Tensor<T>,
    ) -> Result<ParamId> {
        if let Some(&i) = self.index.get(name) {
            if self.values[i].shape() != shape {
                return Err(Error::ShapeMismatch { left: self.values[i].shape().to_vec(), right: shape.to_vec() });
            }
            return Ok(ParamId(i));
        }
        let mut rng = SeededRng::derive(self.seed, name);
        let t = init(&mut rng);
        if t.shape() != shape {
            return Err(Error::ShapeMismatch { left: t.shape().to_vec(), right: shape.to_vec() });
        }
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(t);
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Overwrites an existing parameter; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let slot = &mut self.values[id.0];
        if slot.shape() != value.shape() {
            return Err(Error::arg(
                "ParamStore::set",
                format!("`{name}`: shape {:?} != {:?}", value.shape(), slot.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.values.iter().enumerate().map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn total_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Gradient accumulator parallel to a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn new(len: usize) -> Self {
        Grads { slots: (0..len).map(|_| None).collect() }
    }

    pub fn accumulate(&mut self, id: ParamId, g: Tensor<T>) -> Result<()> {
        match &mut self.slots[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.slots[id.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor<T>>)> {
        self.slots.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_ref()))
    }
}
