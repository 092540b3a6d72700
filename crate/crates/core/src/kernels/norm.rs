use alloc::vec;

use crate::{Error, Result, Scalar, Tensor};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { slope * v })
}

pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>, slope: T) -> Result<Tensor<T>> {
    if x.shape() != grad.shape() {
        return Err(Error::ShapeMismatch { left: x.shape().to_vec(), right: grad.shape().to_vec() });
    }
    let data = x.data().iter().zip(grad.data()).map(|(&v, &g)| if v >= T::zero() { g } else { slope * g }).collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

fn moments<T: Scalar>(x: &[T]) -> (T, T) {
    let m = T::from_f64(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / m;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
    (mean, var)
}

fn check_affine<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, s) = x.ncs("instance_norm")?;
    for p in [gamma, beta] {
        if p.shape() != [c] {
            return Err(Error::ShapeMismatch { left: p.shape().to_vec(), right: vec![c] });
        }
    }
    Ok((n, c, s))
}

/// Per-(sample, channel) standardisation over spatial positions, then `γ·x̂ + β`.
pub fn instance_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let (_, c, s) = check_affine(x, gamma, beta)?;
    let mut out = x.clone();
    for (i, chan) in out.data_mut().chunks_exact_mut(s).enumerate() {
        let (mean, var) = moments(chan);
        let inv = T::one() / (var + eps).sqrt();
        let (g, b) = (gamma.data()[i % c], beta.data()[i % c]);
        chan.iter_mut().for_each(|v| *v = g * (*v - mean) * inv + b);
    }
    Ok(out)
}

/// Gradients `(input, gamma, beta)` of [`instance_norm`].
pub fn instance_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    grad: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (_, c, s) = check_affine(x, gamma, beta)?;
    if grad.shape() != x.shape() {
        return Err(Error::ShapeMismatch { left: grad.shape().to_vec(), right: x.shape().to_vec() });
    }
    let m = T::from_f64(s as f64);
    let mut gx = x.zeros_like();
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for (i, ((xc, gc), out)) in
        x.data().chunks_exact(s).zip(grad.data().chunks_exact(s)).zip(gx.data_mut().chunks_exact_mut(s)).enumerate()
    {
        let (mean, var) = moments(xc);
        let inv = T::one() / (var + eps).sqrt();
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for (&v, &g) in xc.iter().zip(gc) {
            let xh = (v - mean) * inv;
            sum_g += g;
            sum_gx += g * xh;
        }
        gg[i % c] += sum_gx;
        gb[i % c] += sum_g;
        let k = gamma.data()[i % c] * inv;
        let (mg, mgx) = (sum_g / m, sum_gx / m);
        for ((o, &v), &g) in out.iter_mut().zip(xc).zip(gc) {
            let xh = (v - mean) * inv;
            *o = k * (g - mg - xh * mgx);
        }
    }
    Ok((gx, Tensor::from_parts(vec![c], gg), Tensor::from_parts(vec![c], gb)))
}

/// Softmax over axis 1 of `[N, K, ..]`, independently at every position.
pub fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k, s) = x.ncs("softmax_channels")?;
    let mut out = x.clone();
    let d = out.data_mut();
    for ni in 0..n {
        let base = ni * k * s;
        for p in 0..s {
            let mut mx = T::neg_infinity();
            for c in 0..k {
                mx = mx.max(d[base + c * s + p]);
            }
            let mut z = T::zero();
            for c in 0..k {
                let e = (d[base + c * s + p] - mx).exp();
                d[base + c * s + p] = e;
                z += e;
            }
            for c in 0..k {
                d[base + c * s + p] /= z;
            }
        }
    }
    Ok(out)
}

/// `gx = y ⊙ (g − Σ_c g·y)` given the softmax output `y`.
pub fn softmax_channels_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k, s) = y.ncs("softmax_channels")?;
    if grad.shape() != y.shape() {
        return Err(Error::ShapeMismatch { left: grad.shape().to_vec(), right: y.shape().to_vec() });
    }
    let mut gx = y.zeros_like();
    let (yd, gd) = (y.data(), grad.data());
    let out = gx.data_mut();
    for ni in 0..n {
        let base = ni * k * s;
        for p in 0..s {
            let dot: T = (0..k).map(|c| gd[base + c * s + p] * yd[base + c * s + p]).sum();
            for c in 0..k {
                let i = base + c * s + p;
                out[i] = yd[i] * (gd[i] - dot);
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn leaky_relu_definition() {
        let x = Tensor::<f64>::from_f64(&[2], &[-1.0, 2.0]).unwrap();
        let y = leaky_relu(&x, LEAKY_RELU_SLOPE);
        assert_eq!(y.data(), &[-0.01, 2.0]);
    }

    #[test]
    fn norm_moments() {
        let mut rng = SeededRng::new(4);
        let x = rng.normal_tensor::<f64>(&[2, 3, 4, 4, 4], 3.0).map(|v| v + 7.0);
        let ones = Tensor::full(&[3], 1.0).unwrap();
        let zeros = Tensor::zeros(&[3]).unwrap();
        let y = instance_norm(&x, &ones, &zeros, 1e-5).unwrap();
        for chan in y.data().chunks_exact(64) {
            let (m, v) = moments(chan);
            assert!(m.abs() <= 1e-6);
            assert!((v - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn norm_fixed_point() {
        // a channel that is already standardised is (almost) unchanged
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 1, 1], &[-1.0, 1.0]).unwrap();
        let y = instance_norm(&x, &Tensor::full(&[1], 1.0).unwrap(), &Tensor::zeros(&[1]).unwrap(), 1e-5).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-5);
    }

    #[test]
    fn norm_shift_scale_invariance() {
        let mut rng = SeededRng::new(5);
        let x = rng.normal_tensor::<f64>(&[1, 2, 3, 3, 3], 1.0);
        let g = rng.normal_tensor::<f64>(&[2], 1.0);
        let b = rng.normal_tensor::<f64>(&[2], 1.0);
        let base = instance_norm(&x, &g, &b, 0.0).unwrap();
        for (a, c) in [(2.5, -1.0), (0.3, 4.0)] {
            let xs = x.map(|v| a * v + c);
            let y = instance_norm(&xs, &g, &b, 0.0).unwrap();
            assert!(y.max_abs_diff(&base).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn softmax_normalised() {
        let mut rng = SeededRng::new(6);
        let x = rng.normal_tensor::<f64>(&[2, 3, 2, 2, 2], 4.0);
        let y = softmax_channels(&x).unwrap();
        for n in 0..2 {
            for p in 0..8 {
                let s: f64 = (0..3).map(|c| y.data()[n * 24 + c * 8 + p]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
