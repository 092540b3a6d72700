use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::gemm;
use crate::{Error, Result, Scalar, Tensor};

/// Output extent of a strided, zero-padded window, or `None` when it is not integral.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    n: usize,
    ci: usize,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    inp: [usize; 3],
    out: [usize; 3],
}

impl Geometry {
    fn new<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let [n, ci, d, h, w] = input.dims5("conv3d")?;
        let [co, wci, kd, kh, kw] = weight.dims5("conv3d")?;
        if wci != ci {
            return Err(Error::arg("conv3d", format!("input has {ci} channels, weight expects {wci}")));
        }
        if kd != kh || kh != kw || kd % 2 == 0 {
            return Err(Error::arg("conv3d", format!("kernel must be cubic and odd, got {kd}x{kh}x{kw}")));
        }
        let mut out = [0; 3];
        for (o, &e) in out.iter_mut().zip(&[d, h, w]) {
            *o = conv_output_extent(e, kd, stride, pad).ok_or_else(|| {
                Error::arg(
                    "conv3d",
                    format!("extent {e} with kernel {kd}, stride {stride}, padding {pad} gives a non-integral output"),
                )
            })?;
        }
        Ok(Geometry { n, ci, co, k: kd, stride, pad, inp: [d, h, w], out })
    }

    fn rows(&self) -> usize {
        self.ci * self.k * self.k * self.k
    }

    fn in_vol(&self) -> usize {
        self.inp.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.out.iter().product()
    }

    /// 1×1×1, stride 1, unpadded: the sample itself is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Source index along one axis, or `None` inside the zero padding.
    #[inline]
    fn src(&self, o: usize, kk: usize, axis: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < self.inp[axis]).then_some(i as usize)
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let k = self.k;
        let [od, oh, ow] = self.out;
        let p = self.out_vol();
        let [_, h, w] = self.inp;
        for c in 0..self.ci {
            let xc = &x[c * self.in_vol()..(c + 1) * self.in_vol()];
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = ((c * k + kz) * k + ky) * k + kx;
                        let dst = &mut col[row * p..(row + 1) * p];
                        for z in 0..od {
                            for y in 0..oh {
                                let drow = &mut dst[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                                match (self.src(z, kz, 0), self.src(y, ky, 1)) {
                                    (Some(iz), Some(iy)) => {
                                        let srow = &xc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                                        for (xx, v) in drow.iter_mut().enumerate() {
                                            *v = match self.src(xx, kx, 2) {
                                                Some(ix) => srow[ix],
                                                None => T::zero(),
                                            };
                                        }
                                    }
                                    _ => drow.iter_mut().for_each(|v| *v = T::zero()),
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Scalar>(&self, col: &[T], gx: &mut [T]) {
        let k = self.k;
        let [od, oh, ow] = self.out;
        let p = self.out_vol();
        let [_, h, w] = self.inp;
        for c in 0..self.ci {
            let gc = &mut gx[c * self.in_vol()..(c + 1) * self.in_vol()];
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = ((c * k + kz) * k + ky) * k + kx;
                        let src = &col[row * p..(row + 1) * p];
                        for z in 0..od {
                            let Some(iz) = self.src(z, kz, 0) else { continue };
                            for y in 0..oh {
                                let Some(iy) = self.src(y, ky, 1) else { continue };
                                let srow = &src[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                                let drow = &mut gc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                                for (xx, &v) in srow.iter().enumerate() {
                                    if let Some(ix) = self.src(xx, kx, 2) {
                                        drow[ix] += v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3-D cross-correlation of `[N,Ci,D,H,W]` with `[Co,Ci,k,k,k]` plus per-channel bias.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input, weight, stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.co] {
            return Err(Error::ShapeMismatch { left: b.shape().to_vec(), right: vec![g.co] });
        }
    }
    let (p, r) = (g.out_vol(), g.rows());
    let mut out = vec![T::zero(); g.n * g.co * p];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); r * p] };
    for ni in 0..g.n {
        let x = &input.data()[ni * g.ci * g.in_vol()..(ni + 1) * g.ci * g.in_vol()];
        let o = &mut out[ni * g.co * p..(ni + 1) * g.co * p];
        if let Some(b) = bias {
            for (chan, &bv) in o.chunks_exact_mut(p).zip(b.data()) {
                chan.iter_mut().for_each(|v| *v = bv);
            }
        }
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            g.im2col(x, &mut col);
            &col
        };
        gemm(g.co, r, p, weight.data(), false, cols, false, o, bias.is_some());
    }
    Ok(Tensor::from_parts(vec![g.n, g.co, g.out[0], g.out[1], g.out[2]], out))
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Adjoint of [`conv3d`] with respect to input, weight and bias.
pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input, weight, stride, padding)?;
    let expect = [g.n, g.co, g.out[0], g.out[1], g.out[2]];
    if grad_out.shape() != expect {
        return Err(Error::ShapeMismatch { left: grad_out.shape().to_vec(), right: expect.to_vec() });
    }
    let (p, r) = (g.out_vol(), g.rows());
    let mut gx = vec![T::zero(); input.len()];
    let mut gw = vec![T::zero(); weight.len()];
    let mut gb = vec![T::zero(); g.co];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); r * p] };
    let mut gcol = vec![T::zero(); r * p];
    for ni in 0..g.n {
        let x = &input.data()[ni * g.ci * g.in_vol()..(ni + 1) * g.ci * g.in_vol()];
        let go = &grad_out.data()[ni * g.co * p..(ni + 1) * g.co * p];
        for (b, chan) in gb.iter_mut().zip(go.chunks_exact(p)) {
            *b += chan.iter().copied().sum::<T>();
        }
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            g.im2col(x, &mut col);
            &col
        };
        gemm(g.co, p, r, go, false, cols, true, &mut gw, true);
        let gxs = &mut gx[ni * g.ci * g.in_vol()..(ni + 1) * g.ci * g.in_vol()];
        if g.is_pointwise() {
            gemm(r, g.co, p, weight.data(), true, go, false, gxs, false);
        } else {
            gemm(r, g.co, p, weight.data(), true, go, false, &mut gcol, false);
            g.col2im_add(&gcol, gxs);
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(input.shape().to_vec(), gx),
        weight: Tensor::from_parts(weight.shape().to_vec(), gw),
        bias: Tensor::from_parts(vec![g.co], gb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    /// Direct seven-loop cross-correlation.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: usize, p: usize) -> Tensor<f64> {
        let [n, ci, d, h, wd] = x.dims5("t").unwrap();
        let [co, _, k, _, _] = w.dims5("t").unwrap();
        let od = (d + 2 * p - k) / s + 1;
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (wd + 2 * p - k) / s + 1;
        let mut out = Tensor::zeros(&[n, co, od, oh, ow]).unwrap();
        for ni in 0..n {
            for (o, &bias) in b.iter().enumerate().take(co) {
                for z in 0..od {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = bias;
                            for c in 0..ci {
                                for kz in 0..k {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let iz = (z * s + kz) as isize - p as isize;
                                            let iy = (y * s + ky) as isize - p as isize;
                                            let ix = (xx * s + kx) as isize - p as isize;
                                            if iz < 0 || iy < 0 || ix < 0 {
                                                continue;
                                            }
                                            let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                            if iz >= d || iy >= h || ix >= wd {
                                                continue;
                                            }
                                            acc += x.get(&[ni, c, iz, iy, ix]) * w.get(&[o, c, kz, ky, kx]);
                                        }
                                    }
                                }
                            }
                            let off = out.offset(&[ni, o, z, y, xx]);
                            out.data_mut()[off] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn scalar_multiply_add() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 1, 1, 1], &[5.0]).unwrap();
        let w = Tensor::<f64>::from_f64(&[1, 1, 1, 1, 1], &[2.0]).unwrap();
        let b = Tensor::<f64>::from_f64(&[1], &[1.0]).unwrap();
        assert_eq!(conv3d(&x, &w, Some(&b), 1, 0).unwrap().data(), &[11.0]);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = SeededRng::new(3);
        let x = rng.normal_tensor::<f64>(&[2, 1, 3, 4, 5], 1.0);
        let mut w = Tensor::<f64>::zeros(&[1, 1, 3, 3, 3]).unwrap();
        let c = w.offset(&[0, 0, 1, 1, 1]);
        w.data_mut()[c] = 1.0;
        assert_eq!(conv3d(&x, &w, None, 1, 1).unwrap(), x);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = SeededRng::new(11);
        let x = rng.normal_tensor::<f64>(&[1, 2, 4, 4, 4], 1.0);
        let w = rng.normal_tensor::<f64>(&[3, 2, 3, 3, 3], 1.0);
        let b = rng.normal_tensor::<f64>(&[3], 1.0);
        for (s, p) in [(1, 1), (1, 0), (2, 1), (3, 1)] {
            if conv_output_extent(4, 3, s, p).is_none() {
                assert!(conv3d(&x, &w, Some(&b), s, p).is_err());
                continue;
            }
            let got = conv3d(&x, &w, Some(&b), s, p).unwrap();
            let want = conv_oracle(&x, &w, b.data(), s, p);
            let scale = want.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            assert!(got.max_abs_diff(&want).unwrap() <= 1e-12 * scale, "stride {s} pad {p}");
        }
    }

    #[test]
    fn matches_loop_oracle_f32_up_to_8_cubed() {
        let mut rng = SeededRng::new(12);
        let x = rng.normal_tensor::<f64>(&[1, 3, 8, 8, 8], 1.0);
        let w = rng.normal_tensor::<f64>(&[2, 3, 3, 3, 3], 1.0);
        let b = rng.normal_tensor::<f64>(&[2], 1.0);
        let want = conv_oracle(&x, &w, b.data(), 1, 1);
        let got = conv3d(&x.cast::<f32>(), &w.cast::<f32>(), Some(&b.cast::<f32>()), 1, 1).unwrap();
        let scale = want.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = got.cast::<f64>().max_abs_diff(&want).unwrap();
        assert!(err <= 1e-6 * scale, "relative error {}", err / scale);
    }

    #[test]
    fn pointwise_path_matches_oracle() {
        let mut rng = SeededRng::new(13);
        let x = rng.normal_tensor::<f64>(&[2, 4, 2, 3, 2], 1.0);
        let w = rng.normal_tensor::<f64>(&[5, 4, 1, 1, 1], 1.0);
        let b = rng.normal_tensor::<f64>(&[5], 1.0);
        let got = conv3d(&x, &w, Some(&b), 1, 0).unwrap();
        assert!(got.max_abs_diff(&conv_oracle(&x, &w, b.data(), 1, 0)).unwrap() < 1e-12);
    }

    #[test]
    fn errors() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4, 4]).unwrap();
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3, 3]).unwrap();
        assert!(conv3d(&x, &w, None, 1, 1).is_err());
        let w = Tensor::<f64>::zeros(&[1, 2, 3, 3, 3]).unwrap();
        assert!(conv3d(&x, &w, None, 2, 1).is_err());
        let w = Tensor::<f64>::zeros(&[1, 2, 2, 2, 2]).unwrap();
        assert!(conv3d(&x, &w, None, 1, 0).is_err());
    }

    #[test]
    fn backward_is_adjoint() {
        // <conv(x), g> is bilinear: d/dx and d/dw must satisfy the dot-product identity.
        let mut rng = SeededRng::new(21);
        for (s, p) in [(1, 1), (2, 1), (1, 0)] {
            let x = rng.normal_tensor::<f64>(&[2, 2, 5, 5, 5], 1.0);
            let w = rng.normal_tensor::<f64>(&[3, 2, 3, 3, 3], 1.0);
            let y = conv3d(&x, &w, None, s, p).unwrap();
            let go = rng.normal_tensor::<f64>(y.shape(), 1.0);
            let gr = conv3d_backward(&x, &w, &go, s, p).unwrap();
            let dot = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(u, v)| u * v).sum::<f64>();
            let lhs = dot(&y, &go);
            assert!((lhs - dot(&gr.input, &x)).abs() < 1e-9 * lhs.abs().max(1.0));
            assert!((lhs - dot(&gr.weight, &w)).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }
}
