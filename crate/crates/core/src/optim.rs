//! Adam with bias correction.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Grads, ParamStore};
use crate::{Error, Result, Scalar, Tensor};

#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok =
            self.lr > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::arg("adam", format!("invalid hyper-parameters {self:?}")))
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    _marker: core::marker::PhantomData<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| alloc::vec![0.0; t.len()]).collect();
        Adam { config, step: 0, m: zeros(), v: zeros(), _marker: core::marker::PhantomData }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, index: usize) -> (&[f64], &[f64]) {
        (&self.m[index], &self.v[index])
    }

    /// Applies one update. Parameters without a gradient are treated as
    /// having a zero gradient. A non-finite gradient aborts before anything
    /// is modified.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::arg("adam", "parameter, gradient and state counts differ"));
        }
        for (id, g) in grads.iter() {
            if let Some(g) = g {
                if g.shape() != params.get(id).shape() {
                    return Err(Error::ShapeMismatch {
                        left: g.shape().to_vec(),
                        right: params.get(id).shape().to_vec(),
                    });
                }
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient(params.name(id).into()));
                }
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for (id, g) in grads.iter() {
            let i = id.index();
            let p: &mut Tensor<T> = params.get_mut(id);
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let gk = g.map_or(0.0, |g| g.data()[k].as_f64());
                let m = &mut self.m[i][k];
                let v = &mut self.v[i][k];
                *m = beta1 * *m + (1.0 - beta1) * gk;
                *v = beta2 * *v + (1.0 - beta2) * gk * gk;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *w = T::from_f64(w.as_f64() - update);
            }
        }
        Ok(())
    }
}
