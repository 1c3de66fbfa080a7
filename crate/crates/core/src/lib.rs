// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod oracles;
pub mod rng;
pub mod statistics;

pub use error::{Error, Result};
