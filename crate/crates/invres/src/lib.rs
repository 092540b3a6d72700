//! File formats, training, evaluation, memory profiling, self-verification
//! and the `invres` command line, on top of `invres-core`.

pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod evaluate;
pub mod format;
pub mod profile;
pub mod train;
pub mod verify;

pub use error::{Error, FormatError, Result};
