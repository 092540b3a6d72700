//! Training losses. Each returns its value together with the gradient with
//! respect to the prediction. For tensors of rank ≥ 2 axis 1 is the class axis.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Scalar, Tensor};

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Smoothing added to numerator and denominator of the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1e-5;
/// Probabilities are clamped to `[CE_CLAMP, 1 − CE_CLAMP]` inside the log.
pub const CE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub dice: f64,
    pub l2: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { ce: 1.0, dice: 1.0, l2: 0.1, kl: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.ce, self.dice, self.l2, self.kl].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::arg("LossWeights", format!("weights must be finite and non-negative: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub ce: f64,
    pub dice: f64,
    pub l2: f64,
    pub kl: f64,
}

/// Weighted sum of the four components.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.ce * c.ce + w.dice * c.dice + w.l2 * c.l2 + w.kl * c.kl
}

fn same_shape<T: Copy>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { left: a.shape().to_vec(), right: b.shape().to_vec() });
    }
    Ok(())
}

/// `(samples, classes, voxels)` view used by the per-class losses.
fn class_layout<T: Copy>(s: &Tensor<T>) -> (usize, usize, usize) {
    match s.shape() {
        [] => (1, 1, 1),
        [m] => (1, 1, *m),
        [n, k, rest @ ..] => (*n, *k, rest.iter().product()),
    }
}

/// Soft Dice loss `1 − (2Σ TS + ε)/(Σ T + Σ S + ε)`, averaged over classes.
pub fn dice_loss<T: Scalar>(s: &Tensor<T>, t: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    dice_loss_smoothed(s, t, DICE_SMOOTH)
}

pub fn dice_loss_smoothed<T: Scalar>(s: &Tensor<T>, t: &Tensor<T>, eps: f64) -> Result<(f64, Tensor<T>)> {
    same_shape(s, t)?;
    let (n, k, v) = class_layout(s);
    let at = |ni: usize, ki: usize| (ni * k + ki) * v;
    let mut grad = vec![T::zero(); s.len()];
    let mut loss = 0.0;
    for ki in 0..k {
        let (mut inter, mut union) = (0.0, 0.0);
        for ni in 0..n {
            let o = at(ni, ki);
            for (a, b) in s.data()[o..o + v].iter().zip(&t.data()[o..o + v]) {
                let (a, b) = (a.as_f64(), b.as_f64());
                inter += a * b;
                union += a + b;
            }
        }
        let den = union + eps;
        let ratio = if den > 0.0 { (2.0 * inter + eps) / den } else { 1.0 };
        loss += 1.0 - ratio;
        if den > 0.0 {
            for ni in 0..n {
                let o = at(ni, ki);
                for (g, b) in grad[o..o + v].iter_mut().zip(&t.data()[o..o + v]) {
                    let d = (2.0 * b.as_f64() * den - (2.0 * inter + eps)) / (den * den);
                    *g = T::from_f64(-d / k as f64);
                }
            }
        }
    }
    Ok((loss / k as f64, Tensor::from_parts(s.shape().to_vec(), grad)))
}

/// Binary cross-entropy averaged over every class and voxel.
pub fn cross_entropy_loss<T: Scalar>(s: &Tensor<T>, t: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    same_shape(s, t)?;
    let m = s.len() as f64;
    let mut loss = 0.0;
    let grad = s
        .data()
        .iter()
        .zip(t.data())
        .map(|(a, b)| {
            let (raw, b) = (a.as_f64(), b.as_f64());
            let p = raw.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
            loss -= b * p.ln() + (1.0 - b) * (1.0 - p).ln();
            let g = if raw == p { (-b / p + (1.0 - b) / (1.0 - p)) / m } else { 0.0 };
            T::from_f64(g)
        })
        .collect();
    Ok((loss / m, Tensor::from_parts(s.shape().to_vec(), grad)))
}

/// `(1/N) Σ (μ² + e^logvar − logvar − 1)` with gradients for `(μ, logvar)`.
pub fn kl_loss<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>, n: usize) -> Result<(f64, Tensor<T>, Tensor<T>)> {
    same_shape(mu, logvar)?;
    if n == 0 {
        return Err(Error::arg("kl_loss", "normalizer N must be positive"));
    }
    let nf = n as f64;
    let mut loss = 0.0;
    let mut gmu = Vec::with_capacity(mu.len());
    let mut glv = Vec::with_capacity(mu.len());
    for (m, lv) in mu.data().iter().zip(logvar.data()) {
        let (m, lv) = (m.as_f64(), lv.as_f64());
        loss += m * m + lv.exp() - lv - 1.0;
        gmu.push(T::from_f64(2.0 * m / nf));
        glv.push(T::from_f64((lv.exp() - 1.0) / nf));
    }
    Ok((loss / nf, Tensor::from_parts(mu.shape().to_vec(), gmu), Tensor::from_parts(mu.shape().to_vec(), glv)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Squared reconstruction error, gradient with respect to `recon`.
pub fn l2_recon_loss<T: Scalar>(
    recon: &Tensor<T>,
    input: &Tensor<T>,
    reduction: Reduction,
) -> Result<(f64, Tensor<T>)> {
    same_shape(recon, input)?;
    let scale = match reduction {
        Reduction::Mean => 1.0 / recon.len() as f64,
        Reduction::Sum => 1.0,
    };
    let mut loss = 0.0;
    let grad = recon
        .data()
        .iter()
        .zip(input.data())
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            loss += d * d;
            T::from_f64(2.0 * d * scale)
        })
        .collect();
    Ok((loss * scale, Tensor::from_parts(recon.shape().to_vec(), grad)))
}

/// One-hot encoding of labels `[N, D, H, W]` (or any `[N, ..]`) into `[N, K, ..]`.
pub fn one_hot<T: Scalar>(labels: &[u8], shape: &[usize], classes: usize) -> Result<Tensor<T>> {
    if shape.is_empty() || labels.len() != shape.iter().product::<usize>() {
        return Err(Error::arg("one_hot", format!("{} labels do not fill shape {shape:?}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::arg("one_hot", format!("label {bad} outside {classes} classes")));
    }
    let n = shape[0];
    let v = labels.len() / n;
    let mut data = vec![T::zero(); n * classes * v];
    for (i, &l) in labels.iter().enumerate() {
        let (ni, p) = (i / v, i % v);
        data[(ni * classes + l as usize) * v + p] = T::one();
    }
    let mut out = vec![n, classes];
    out.extend_from_slice(&shape[1..]);
    Ok(Tensor::from_parts(out, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    #[test]
    fn dice_examples() {
        assert!(dice_loss(&t(&[1.0, 0.0, 1.0]), &t(&[1.0, 0.0, 1.0])).unwrap().0.abs() < 1e-12);
        assert!((dice_loss(&t(&[1.0, 0.0]), &t(&[0.0, 1.0])).unwrap().0 - 1.0).abs() < 1e-5);
        assert!((dice_loss_smoothed(&t(&[0.5, 0.5]), &t(&[1.0, 0.0]), 0.0).unwrap().0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ce_examples() {
        let (l, _) = cross_entropy_loss(&t(&[1.0, 0.0]), &t(&[1.0, 0.0])).unwrap();
        assert!((l - CE_CLAMP).abs() < 1e-12);
        let (l, _) = cross_entropy_loss(&t(&[0.5; 4]), &t(&[1.0, 0.0, 1.0, 0.0])).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = cross_entropy_loss(&t(&[0.9, 0.2]), &t(&[1.0, 0.0])).unwrap();
        assert!((l - 0.164_252_033_486_018).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_loss(&t(&[0.0]), &t(&[0.0]), 1).unwrap().0, 0.0);
        assert!((kl_loss(&t(&[1.0]), &t(&[0.0]), 1).unwrap().0 - 1.0).abs() < 1e-15);
        let lv = 2.0f64.ln();
        let want = (0.25 + 2.0 - lv - 1.0) / 4.0;
        assert!((kl_loss(&t(&[0.5]), &t(&[lv]), 4).unwrap().0 - want).abs() < 1e-15);
        assert!((want - 0.139_213).abs() < 1e-6);
    }

    #[test]
    fn l2_and_total() {
        let a = t(&[1.0, 2.0, 3.0]);
        assert_eq!(l2_recon_loss(&a, &a, Reduction::Mean).unwrap().0, 0.0);
        let b = a.map(|v| v + 1.0);
        assert!((l2_recon_loss(&b, &a, Reduction::Mean).unwrap().0 - 1.0).abs() < 1e-15);
        assert_eq!(l2_recon_loss(&b, &a, Reduction::Sum).unwrap().0, 3.0);
        let c = LossComponents { ce: 1.0, dice: 1.0, l2: 10.0, kl: 10.0 };
        assert!((total_loss(&c, &LossWeights::default()) - 4.0).abs() < 1e-15);
        assert_eq!(total_loss(&LossComponents::default(), &LossWeights::default()), 0.0);
    }

    #[test]
    fn one_hot_layout() {
        let oh = one_hot::<f64>(&[0, 2, 1], &[1, 3], 3).unwrap();
        assert_eq!(oh.shape(), &[1, 3, 3]);
        assert_eq!(oh.data(), &[1., 0., 0., 0., 0., 1., 0., 1., 0.]);
        assert!(one_hot::<f64>(&[3], &[1, 1], 3).is_err());
    }
}
