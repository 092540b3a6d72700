//! Numeric kernels with hand-written adjoints. Everything here is a pure
//! function of its arguments.

mod conv;
mod dense;
mod norm;
mod resample;

pub use conv::{conv3d, conv3d_backward, conv_output_extent, ConvGrads};
pub use dense::{
    channel_mix, channel_mix_backward, global_avg_pool, global_avg_pool_backward, invert_matrix, linear,
    linear_backward, orthogonal_matrix,
};
pub use norm::{
    instance_norm, instance_norm_backward, leaky_relu, leaky_relu_backward, softmax_channels,
    softmax_channels_backward, INSTANCE_NORM_EPS, LEAKY_RELU_SLOPE,
};
pub use resample::{maxpool3d, maxpool3d_backward, trilinear_upsample, trilinear_upsample_backward};

use crate::Scalar;

/// `c (+)= op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`, all row-major.
/// With `trans_a` the buffer `a` holds the `k×m` matrix, likewise for `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        T::gemm_raw(m, k, n, T::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}
