//! Graph nodes: primitive layers, composite blocks, the additive coupling
//! block and learnable invertible resampling.

mod block;
mod coupling;
mod invertible;
mod primitive;

pub use block::Block;
pub use coupling::{coupling_forward, coupling_inverse, residual_subnet, CouplingBlock};
pub use invertible::{invertible_downsample, invertible_upsample, Direction, InvertibleResampleOp};
pub use primitive::{
    he_normal, ones_init, zeros_init, AddOp, ConcatOp, Conv3dOp, ConvInit, GapOp, InstanceNormOp, LeakyReluOp,
    LinearOp, MaxPoolOp, ReparamOp, ReshapeOp, SoftmaxOp, SplitOp, TrilinearOp,
};
