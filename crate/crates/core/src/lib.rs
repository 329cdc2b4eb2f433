//! Linear-complexity multi-reference entropy coding.
//!
//! The crate provides the context modules of a slice-serial, two-pass
//! checkerboard entropy model (channel-wise, windowed local attention,
//! intra-slice and inter-slice linear global attention), a mean-scale
//! Gaussian rate model with 16-bit CDF tables, a bit-exact range coder and
//! an end-to-end codec pipeline around a toy seeded transform.

pub mod attention;
pub mod bench;
pub mod checkerboard;
pub mod codec;
pub mod context;
pub mod entropy;
pub mod error;
pub mod numerics;
pub mod range_coder;

pub use error::{Error, Result};
