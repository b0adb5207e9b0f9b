//! Geometric tree representation learning.
//!
//! Branch message passing over length-three descending paths with
//! rigid-motion invariant features, self-supervised objectives (partial
//! ordering and subtree growth), exact coordinate reconstruction from the
//! features, and a small training and evaluation harness.

pub mod autodiff;
pub mod branches;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod synth;
pub mod train;
pub mod tree;

pub use error::{GtmpError, Result};
