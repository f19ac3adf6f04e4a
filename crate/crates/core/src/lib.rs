//! Task-specific point cloud descriptors.
//!
//! The pipeline encodes a pair of point clouds with a multi-scale
//! convolution-plus-cross-attention encoder, upsamples the per-scale features
//! back to the original points, fuses them per point with a learning-free
//! consistency-weighted iteration, and trains the whole stack with a
//! contrastive loss over ground-truth correspondences. Matching, RANSAC
//! registration, and the full evaluation metric set ride on top.

pub mod autodiff;
pub mod error;
pub mod encoder;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod matching;
pub mod registration;
pub mod synth;

pub use error::{Error, Result};
