//! Dense-tensor reverse-mode autodiff with invertibility-aware backpropagation,
//! plus the invertible volumetric U-Net family built on it.
//!
//! The crate is `no_std` + `alloc`; the default `std` feature only turns on
//! runtime SIMD detection in the GEMM backend.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
mod error;
pub mod kernels;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod rng;
mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{DType, Precision, Scalar};
pub use tensor::Tensor;
