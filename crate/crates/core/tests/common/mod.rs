#![allow(dead_code)]

use invres_core::Tensor;

/// Central difference of `f` at 0 with step `h`, or `None` when the forward
/// and backward one-sided differences disagree, i.e. a kink (LeakyReLU, max
/// pooling) lies within `h` of the sample point.
pub fn central_difference(f: impl Fn(f64) -> f64, h: f64) -> Option<f64> {
    let (fp, f0, fm) = (f(h), f(0.0), f(-h));
    let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
    let smooth = (fwd - bwd).abs() <= 1e-3 * fwd.abs().max(bwd.abs()).max(1.0);
    smooth.then(|| (fp - fm) / (2.0 * h))
}

/// Relative max-abs difference, measured against `scale` when the tensors
/// themselves are (analytically) zero.
pub fn rel_diff(a: &Tensor<f64>, b: &Tensor<f64>, scale: f64) -> f64 {
    let own = a.data().iter().chain(b.data()).map(|v| v.abs()).fold(0.0, f64::max);
    a.max_abs_diff(b).unwrap() / own.max(scale).max(f64::MIN_POSITIVE)
}

pub fn max_abs(t: &Tensor<f64>) -> f64 {
    t.data().iter().map(|v| v.abs()).fold(0.0, f64::max)
}
