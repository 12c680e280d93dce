// NaN must fail validation, hence negated comparisons; numeric kernels index several buffers per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod csc;
pub mod dfe;
pub mod error;
pub mod gradcheck;
pub mod imageio;
pub mod lip;
pub mod mghf;
pub mod numerics;
pub mod pruning;
pub mod trainer;

pub use error::{Error, Result};
