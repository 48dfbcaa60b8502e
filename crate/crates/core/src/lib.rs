//! Canonical fundamental skew t (CFUST) distributions and their restricted and
//! unrestricted sub-families: density, sampling, EM fitting of finite
//! mixtures, and a paired-comparison clustering benchmark.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod distributions;
pub mod emfit;
pub mod error;
pub mod exec;
pub mod numerics;

pub use error::{Error, Result};
