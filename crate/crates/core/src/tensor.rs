//! Dense row-major tensors and the layout-only primitives (channel split/concat,
//! 3-D pixel shuffle).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Scalar};

/// Dense N-dimensional array, row-major and contiguous.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: core::fmt::Debug> core::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        if self.data.len() <= 16 {
            f.debug_struct("Tensor").field("shape", &self.shape).field("data", &self.data).finish()
        } else {
            f.debug_struct("Tensor").field("shape", &self.shape).field("len", &self.data.len()).finish_non_exhaustive()
        }
    }
}

pub(crate) fn check_extents(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape { shape: shape.to_vec(), reason: "rank 0".into() });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape { shape: shape.to_vec(), reason: "zero extent".into() });
    }
    Ok(shape.iter().product())
}

impl<T: Copy> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_extents(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("{} elements supplied, shape holds {n}", data.len()),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_extents(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![value; n] })
    }

    /// Callers guarantee `product(shape) == data.len()` and nonzero extents.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major linear offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            assert!(i < e, "index {index:?} out of bounds for {:?}", self.shape);
            off = off * e + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let n = check_extents(shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch { left: self.shape, right: shape.to_vec() });
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data })
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// `[N, C, rest..]` → `(N, C, prod(rest))`.
    pub(crate) fn ncs(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        if self.rank() < 2 {
            return Err(Error::arg(op, format!("expected rank >= 2, got shape {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2..].iter().product()))
    }

    pub(crate) fn dims5(&self, op: &'static str) -> Result<[usize; 5]> {
        match *self.shape.as_slice() {
            [n, c, d, h, w] => Ok([n, c, d, h, w]),
            _ => Err(Error::arg(op, format!("expected [N,C,D,H,W], got {:?}", self.shape))),
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn zeros_like(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: vec![T::zero(); self.data.len()] }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        self.map(|v| U::from_f64(v.as_f64()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { left: self.shape.clone(), right: other.shape.clone() });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { left: self.shape.clone(), right: other.shape.clone() });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { left: self.shape.clone(), right: other.shape.clone() });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// `result[i] = op(a[i], b[i])`; shapes must be identical.
pub fn elementwise<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: BinaryOp) -> Result<Tensor<T>> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch { left: a.shape.clone(), right: b.shape.clone() });
    }
    let f: fn(T, T) -> T = match op {
        BinaryOp::Add => |x, y| x + y,
        BinaryOp::Sub => |x, y| x - y,
        BinaryOp::Mul => |x, y| x * y,
    };
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(a, b, BinaryOp::Add)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(a, b, BinaryOp::Sub)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(a, b, BinaryOp::Mul)
}

/// Splits `[N, C, ..]` into channels `[0, at)` and `[at, C)`.
pub fn split_channels<T: Copy>(x: &Tensor<T>, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, s) = x.ncs("split_channels")?;
    if at == 0 || at >= c {
        return Err(Error::arg("split_channels", format!("split point {at} outside (0, {c})")));
    }
    let mut a = Vec::with_capacity(n * at * s);
    let mut b = Vec::with_capacity(n * (c - at) * s);
    for sample in x.data.chunks_exact(c * s) {
        a.extend_from_slice(&sample[..at * s]);
        b.extend_from_slice(&sample[at * s..]);
    }
    let mut sa = x.shape.clone();
    sa[1] = at;
    let mut sb = x.shape.clone();
    sb[1] = c - at;
    Ok((Tensor::from_parts(sa, a), Tensor::from_parts(sb, b)))
}

/// Concatenates along the channel axis; all other extents must agree.
pub fn concat_channels<T: Copy>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (na, ca, sa) = a.ncs("concat_channels")?;
    let (nb, cb, sb) = b.ncs("concat_channels")?;
    if na != nb || sa != sb || a.shape[2..] != b.shape[2..] {
        return Err(Error::ShapeMismatch { left: a.shape.clone(), right: b.shape.clone() });
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for (pa, pb) in a.data.chunks_exact(ca * sa).zip(b.data.chunks_exact(cb * sb)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    let mut shape = a.shape.clone();
    shape[1] = ca + cb;
    Ok(Tensor::from_parts(shape, data))
}

/// Space-to-channel rearrangement: `[N,C,D,H,W]` → `[N, C·r³, D/r, H/r, W/r]`.
///
/// Output channel `c·r³ + o` holds sub-voxel offset `o = od·r² + oh·r + ow`
/// of input channel `c`.
pub fn pixel_unshuffle3d<T: Copy>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, d, h, w] = x.dims5("pixel_unshuffle3d")?;
    if r == 0 || d % r != 0 || h % r != 0 || w % r != 0 {
        return Err(Error::arg(
            "pixel_unshuffle3d",
            format!("spatial extents {:?} not divisible by {r}", &x.shape[2..]),
        ));
    }
    let (d2, h2, w2) = (d / r, h / r, w / r);
    let r3 = r * r * r;
    let mut out = Vec::with_capacity(x.len());
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * d * h * w;
            for o in 0..r3 {
                let (od, oh, ow) = (o / (r * r), (o / r) % r, o % r);
                for z in 0..d2 {
                    for y in 0..h2 {
                        let row = base + ((z * r + od) * h + y * r + oh) * w + ow;
                        out.extend((0..w2).map(|xx| x.data[row + xx * r]));
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c * r3, d2, h2, w2], out))
}

/// Exact inverse of [`pixel_unshuffle3d`].
pub fn pixel_shuffle3d<T: Copy + Default>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, cr, d2, h2, w2] = x.dims5("pixel_shuffle3d")?;
    let r3 = r * r * r;
    if r == 0 || cr % r3 != 0 {
        return Err(Error::arg("pixel_shuffle3d", format!("channels {cr} not divisible by {r3}")));
    }
    let c = cr / r3;
    let (d, h, w) = (d2 * r, h2 * r, w2 * r);
    let mut out = vec![T::default(); x.len()];
    let mut src = 0;
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * d * h * w;
            for o in 0..r3 {
                let (od, oh, ow) = (o / (r * r), (o / r) % r, o % r);
                for z in 0..d2 {
                    for y in 0..h2 {
                        let row = base + ((z * r + od) * h + y * r + oh) * w + ow;
                        for xx in 0..w2 {
                            out[row + xx * r] = x.data[src];
                            src += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, d, h, w], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn binary_ops() {
        let a = Tensor::<f64>::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2], &[3.0, 4.0]).unwrap();
        assert_eq!(add(&a, &b).unwrap().data(), &[4.0, 6.0]);
        let c = Tensor::<f64>::from_f64(&[2], &[2.0, 3.0]).unwrap();
        let d = Tensor::<f64>::from_f64(&[2], &[0.0, 1.0]).unwrap();
        assert_eq!(mul(&c, &d).unwrap().data(), &[0.0, 3.0]);
        let x = seq(&[2, 3]);
        assert!(sub(&x, &x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(&[3, 2]).unwrap();
        let err = add(&a, &b).unwrap_err();
        assert_eq!(err, Error::ShapeMismatch { left: vec![2, 3], right: vec![3, 2] });
        assert!(err.to_string().contains("[2, 3]") && err.to_string().contains("[3, 2]"));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f64>::zeros(&[2, 0]).is_err());
        assert!(Tensor::new(&[2, 2], vec![1.0f64; 3]).is_err());
    }

    #[test]
    fn row_major_offsets() {
        let x = seq(&[2, 3, 4]);
        assert_eq!(x.get(&[1, 2, 3]), 23.0);
        assert_eq!(x.get(&[0, 1, 0]), 4.0);
    }

    #[test]
    fn split_then_concat_is_exact() {
        let x = seq(&[2, 4, 2, 2, 2]);
        let (a, b) = split_channels(&x, 2).unwrap();
        assert_eq!(concat_channels(&a, &b).unwrap(), x);
    }

    #[test]
    fn split_single_channel_slices() {
        let x = seq(&[1, 2, 1, 2, 2]);
        let (a, b) = split_channels(&x, 1).unwrap();
        assert_eq!(a.shape(), &[1, 1, 1, 2, 2]);
        assert_eq!(a.data(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(b.data(), &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn split_matches_direct_indexing() {
        let x = seq(&[2, 6, 2, 3, 2]);
        let (a, b) = split_channels(&x, 4).unwrap();
        for n in 0..2 {
            for c in 0..6 {
                for z in 0..2 {
                    for y in 0..3 {
                        for w in 0..2 {
                            let v = x.get(&[n, c, z, y, w]);
                            if c < 4 {
                                assert_eq!(a.get(&[n, c, z, y, w]), v);
                            } else {
                                assert_eq!(b.get(&[n, c - 4, z, y, w]), v);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn split_out_of_range() {
        let x = seq(&[1, 4, 1, 1, 1]);
        assert!(split_channels(&x, 0).is_err());
        assert!(split_channels(&x, 4).is_err());
    }

    #[test]
    fn unshuffle_orders_sub_voxels() {
        // [1,1,2,2,2] holding 0..8 in row-major (d,h,w) order
        let x = seq(&[1, 1, 2, 2, 2]);
        let y = pixel_unshuffle3d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 8, 1, 1, 1]);
        // offset o = od*4 + oh*2 + ow coincides with the row-major index here
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn unshuffle_channel_layout() {
        let x = seq(&[1, 2, 2, 2, 4]);
        let y = pixel_unshuffle3d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 16, 1, 1, 2]);
        for c in 0..2 {
            for o in 0..8 {
                let (od, oh, ow) = (o / 4, (o / 2) % 2, o % 2);
                for xx in 0..2 {
                    assert_eq!(y.get(&[0, c * 8 + o, 0, 0, xx]), x.get(&[0, c, od, oh, xx * 2 + ow]));
                }
            }
        }
    }

    #[test]
    fn shuffle_identity_factor() {
        let x = seq(&[1, 3, 2, 2, 2]);
        assert_eq!(pixel_unshuffle3d(&x, 1).unwrap(), x);
        assert_eq!(pixel_shuffle3d(&x, 1).unwrap(), x);
    }

    #[test]
    fn shuffle_rejects_indivisible() {
        let x = seq(&[1, 1, 3, 2, 2]);
        assert!(pixel_unshuffle3d(&x, 2).is_err());
        let y = seq(&[1, 4, 1, 1, 1]);
        assert!(pixel_shuffle3d(&y, 2).is_err());
    }
}
