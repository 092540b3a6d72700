use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Scalar, Tensor};

#[cfg(not(feature = "std"))]
use num_traits::Float;

fn pool_dims<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<[usize; 5]> {
    let dims = x.dims5("maxpool3d")?;
    if window == 0 || dims[2..].iter().any(|&e| e % window != 0) {
        return Err(Error::arg(
            "maxpool3d",
            format!("spatial extents {:?} not divisible by window {window}", &dims[2..]),
        ));
    }
    Ok(dims)
}

/// Linear input index of the maximum of every window (first one on ties).
fn argmax_windows<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<(Vec<usize>, [usize; 5])> {
    let [n, c, d, h, w] = pool_dims(x, window)?;
    let (od, oh, ow) = (d / window, h / window, w / window);
    let xd = x.data();
    let mut idx = Vec::with_capacity(n * c * od * oh * ow);
    for plane in 0..n * c {
        let base = plane * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + (z * window * h + y * window) * w + xx * window;
                    for kz in 0..window {
                        for ky in 0..window {
                            for kx in 0..window {
                                let i = base + ((z * window + kz) * h + y * window + ky) * w + xx * window + kx;
                                if xd[i] > xd[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
    }
    Ok((idx, [n, c, od, oh, ow]))
}

/// Non-overlapping max pooling with a cubic window (stride = window).
pub fn maxpool3d<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (idx, shape) = argmax_windows(x, window)?;
    let data = idx.iter().map(|&i| x.data()[i]).collect();
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

pub fn maxpool3d_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (idx, shape) = argmax_windows(x, window)?;
    if grad.shape() != shape {
        return Err(Error::ShapeMismatch { left: grad.shape().to_vec(), right: shape.to_vec() });
    }
    let mut gx = x.zeros_like();
    for (&i, &g) in idx.iter().zip(grad.data()) {
        gx.data_mut()[i] += g;
    }
    Ok(gx)
}

/// Interpolation taps along one axis, half-pixel centres (align-corners = false).
fn taps(input: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..input * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Trilinear upsampling by an integer factor on every spatial axis.
pub fn trilinear_upsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, d, h, w] = x.dims5("trilinear_upsample")?;
    if factor == 0 {
        return Err(Error::arg("trilinear_upsample", "factor must be positive"));
    }
    let (tz, ty, tx) = (taps(d, factor), taps(h, factor), taps(w, factor));
    let (od, oh, ow) = (d * factor, h * factor, w * factor);
    let mut out = vec![T::zero(); n * c * od * oh * ow];
    for (plane, dst) in out.chunks_exact_mut(od * oh * ow).enumerate() {
        let src = &x.data()[plane * d * h * w..(plane + 1) * d * h * w];
        let at = |z: usize, y: usize, xx: usize| src[(z * h + y) * w + xx].as_f64();
        let mut o = 0;
        for &(z0, z1, lz) in &tz {
            for &(y0, y1, ly) in &ty {
                for &(x0, x1, lx) in &tx {
                    let c00 = at(z0, y0, x0) * (1.0 - lx) + at(z0, y0, x1) * lx;
                    let c01 = at(z0, y1, x0) * (1.0 - lx) + at(z0, y1, x1) * lx;
                    let c10 = at(z1, y0, x0) * (1.0 - lx) + at(z1, y0, x1) * lx;
                    let c11 = at(z1, y1, x0) * (1.0 - lx) + at(z1, y1, x1) * lx;
                    let c0 = c00 * (1.0 - ly) + c01 * ly;
                    let c1 = c10 * (1.0 - ly) + c11 * ly;
                    dst[o] = T::from_f64(c0 * (1.0 - lz) + c1 * lz);
                    o += 1;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, od, oh, ow], out))
}

/// Adjoint of [`trilinear_upsample`]: scatters each output gradient to its eight taps.
pub fn trilinear_upsample_backward<T: Scalar>(
    input_shape: &[usize],
    grad: &Tensor<T>,
    factor: usize,
) -> Result<Tensor<T>> {
    let [n, c, d, h, w] = match *input_shape {
        [n, c, d, h, w] => [n, c, d, h, w],
        _ => return Err(Error::arg("trilinear_upsample", format!("bad input shape {input_shape:?}"))),
    };
    let expect = [n, c, d * factor, h * factor, w * factor];
    if grad.shape() != expect {
        return Err(Error::ShapeMismatch { left: grad.shape().to_vec(), right: expect.to_vec() });
    }
    let (tz, ty, tx) = (taps(d, factor), taps(h, factor), taps(w, factor));
    let ovol = expect[2] * expect[3] * expect[4];
    let mut gx = vec![0.0f64; n * c * d * h * w];
    for (plane, dst) in gx.chunks_exact_mut(d * h * w).enumerate() {
        let g = &grad.data()[plane * ovol..(plane + 1) * ovol];
        let mut o = 0;
        for &(z0, z1, lz) in &tz {
            for &(y0, y1, ly) in &ty {
                for &(x0, x1, lx) in &tx {
                    let v = g[o].as_f64();
                    o += 1;
                    for (zz, wz) in [(z0, 1.0 - lz), (z1, lz)] {
                        for (yy, wy) in [(y0, 1.0 - ly), (y1, ly)] {
                            let row = (zz * h + yy) * w;
                            dst[row + x0] += v * wz * wy * (1.0 - lx);
                            dst[row + x1] += v * wz * wy * lx;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), gx.into_iter().map(T::from_f64).collect()))
}
