use super::memory::{MemoryReport, Meter};
use super::param::{Grads, ParamId, ParamStore};
use crate::{Result, Scalar, Tensor};

/// Per-pass execution state: parameter access, gradient accumulation and
/// the activation meter. One context belongs to one top-level tape.
pub struct Context<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    grads: Grads<T>,
    pub(crate) meter: Meter,
    pub(crate) inverse_guard: bool,
    pub(crate) depth: usize,
    pub(crate) owner: usize,
}

impl<'p, T: Scalar> Context<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Context {
            params,
            grads: Grads::new(params.len()),
            meter: Meter::default(),
            inverse_guard: false,
            depth: 0,
            owner: 0,
        }
    }

    /// Keeps a sum / sum-of-squares checksum of every discarded activation and
    /// verifies reconstructions against it (relative tolerance 1e-8).
    pub fn with_inverse_guard(mut self, on: bool) -> Self {
        self.inverse_guard = on;
        self
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn param(&self, id: ParamId) -> &'p Tensor<T> {
        self.params.get(id)
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: Tensor<T>) -> Result<()> {
        self.grads.accumulate(id, g)
    }

    pub fn grads(&self) -> &Grads<T> {
        &self.grads
    }

    pub fn into_grads(self) -> Grads<T> {
        self.grads
    }

    pub fn meter(&self) -> &Meter {
        &self.meter
    }

    pub fn memory_report(&self) -> MemoryReport {
        self.meter.report(T::PRECISION.bytes())
    }
}
