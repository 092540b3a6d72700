use alloc::format;
use alloc::string::String;
use alloc::vec;

use nalgebra::DMatrix;

use super::gemm;
use crate::rng::SeededRng;
use crate::{Error, Result, Scalar, Tensor};

/// `y = x·Wᵀ + b` for `x: [N, in]`, `W: [out, in]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, fin, fout) = linear_dims(x, w, b)?;
    let mut y = vec![T::zero(); n * fout];
    for row in y.chunks_exact_mut(fout) {
        row.copy_from_slice(b.data());
    }
    gemm(n, fin, fout, x.data(), false, w.data(), true, &mut y, true);
    Ok(Tensor::from_parts(vec![n, fout], y))
}

fn linear_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (&[n, fin], &[fout, win]) = (x.shape(), w.shape()) else {
        return Err(Error::arg(
            "linear",
            format!("expected [N,in] and [out,in], got {:?} and {:?}", x.shape(), w.shape()),
        ));
    };
    if win != fin || b.shape() != [fout] {
        return Err(Error::arg(
            "linear",
            format!("weight {:?} / bias {:?} do not fit input {:?}", w.shape(), b.shape(), x.shape()),
        ));
    }
    Ok((n, fin, fout))
}

/// Gradients `(input, weight, bias)` of [`linear`].
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, fin, fout) = linear_dims(x, w, b)?;
    if grad.shape() != [n, fout] {
        return Err(Error::ShapeMismatch { left: grad.shape().to_vec(), right: vec![n, fout] });
    }
    let mut gx = vec![T::zero(); n * fin];
    gemm(n, fout, fin, grad.data(), false, w.data(), false, &mut gx, false);
    let mut gw = vec![T::zero(); fout * fin];
    gemm(fout, n, fin, grad.data(), true, x.data(), false, &mut gw, false);
    let mut gb = vec![T::zero(); fout];
    for row in grad.data().chunks_exact(fout) {
        for (a, &g) in gb.iter_mut().zip(row) {
            *a += g;
        }
    }
    Ok((
        Tensor::from_parts(vec![n, fin], gx),
        Tensor::from_parts(vec![fout, fin], gw),
        Tensor::from_parts(vec![fout], gb),
    ))
}

/// Spatial mean: `[N, C, ..]` → `[N, C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, s) = x.ncs("global_avg_pool")?;
    let m = T::from_f64(s as f64);
    let data = x.data().chunks_exact(s).map(|ch| ch.iter().copied().sum::<T>() / m).collect();
    Ok(Tensor::from_parts(vec![n, c], data))
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad: &Tensor<T>) -> Result<Tensor<T>> {
    if input_shape.len() < 2 || grad.shape() != &input_shape[..2] {
        return Err(Error::ShapeMismatch { left: grad.shape().to_vec(), right: input_shape.to_vec() });
    }
    let s: usize = input_shape[2..].iter().product();
    let m = T::from_f64(s as f64);
    let mut out = vec![T::zero(); grad.len() * s];
    for (ch, &g) in out.chunks_exact_mut(s).zip(grad.data()) {
        ch.iter_mut().for_each(|v| *v = g / m);
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), out))
}

/// Pointwise channel mixing `y[n,:,p] = M · x[n,:,p]` with `M: [C_out, C_in]`.
pub fn channel_mix<T: Scalar>(x: &Tensor<T>, m: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, s) = x.ncs("channel_mix")?;
    let &[co, ci] = m.shape() else {
        return Err(Error::arg("channel_mix", format!("mixing matrix must be 2-D, got {:?}", m.shape())));
    };
    if ci != c {
        return Err(Error::arg("channel_mix", format!("matrix {:?} does not fit {c} channels", m.shape())));
    }
    let mut y = vec![T::zero(); n * co * s];
    for (xs, ys) in x.data().chunks_exact(c * s).zip(y.chunks_exact_mut(co * s)) {
        gemm(co, c, s, m.data(), false, xs, false, ys, false);
    }
    let mut shape = x.shape().to_vec();
    shape[1] = co;
    Ok(Tensor::from_parts(shape, y))
}

/// Gradients `(input, matrix)` of [`channel_mix`].
pub fn channel_mix_backward<T: Scalar>(
    x: &Tensor<T>,
    m: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (_, c, s) = x.ncs("channel_mix")?;
    let co = m.shape()[0];
    let mut gx = x.zeros_like();
    let mut gm = m.zeros_like();
    for ((xs, gs), gxs) in
        x.data().chunks_exact(c * s).zip(grad.data().chunks_exact(co * s)).zip(gx.data_mut().chunks_exact_mut(c * s))
    {
        gemm(c, co, s, m.data(), true, gs, false, gxs, false);
        gemm(co, s, c, gs, false, xs, true, gm.data_mut(), true);
    }
    Ok((gx, gm))
}

/// Largest 1-norm condition number accepted for an invertible mixing matrix.
pub const MAX_CONDITION: f64 = 1e10;

/// Inverse of a square matrix; rejects singular or badly conditioned input.
pub fn invert_matrix<T: Scalar>(m: &Tensor<T>, name: &str) -> Result<Tensor<T>> {
    let &[r, c] = m.shape() else {
        return Err(Error::arg("invert_matrix", format!("expected a square matrix, got {:?}", m.shape())));
    };
    if r != c {
        return Err(Error::arg("invert_matrix", format!("expected a square matrix, got {:?}", m.shape())));
    }
    let a = DMatrix::from_row_iterator(r, c, m.data().iter().map(|v| v.as_f64()));
    let ill = |cond: f64| Error::IllConditioned { name: String::from(name), cond };
    if !a.iter().all(|v| v.is_finite()) {
        return Err(ill(f64::INFINITY));
    }
    let inv = a.clone().lu().try_inverse().ok_or_else(|| ill(f64::INFINITY))?;
    let norm1 =
        |x: &DMatrix<f64>| x.column_iter().map(|col| col.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let cond = norm1(&a) * norm1(&inv);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(ill(cond));
    }
    let data = inv.transpose().iter().map(|&v| T::from_f64(v)).collect();
    Ok(Tensor::from_parts(vec![r, c], data))
}

/// Random orthogonal `n×n` matrix (QR of a Gaussian matrix with sign-fixed diagonal).
pub fn orthogonal_matrix<T: Scalar>(n: usize, rng: &mut SeededRng) -> Tensor<T> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.normal());
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let data = q.transpose().iter().map(|&v| T::from_f64(v)).collect();
    Tensor::from_parts(vec![n, n], data)
}
