//! Two-timescale sequence autoencoder for battery voltage prediction.
//!
//! A strided 1-D convolutional encoder compresses a window of past current
//! and voltage into a low-dimensional latent state; a GRU decoder seeded with
//! that state rolls voltage forward under known future current. A lag-1
//! autocorrelation penalty on consecutive latents pushes the latent toward
//! slowly varying quantities such as state of charge and aging.

// `!(x > 0.0)` is deliberate: it rejects NaN along with the out-of-range
// values. Index loops mirror the math in the kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod loss;
pub mod numerics;
pub mod training;

pub use error::{Error, ErrorKind, Result};
