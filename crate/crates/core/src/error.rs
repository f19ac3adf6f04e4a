//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by geometry, the tape engine, the descriptor pipeline,
/// and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: left is {lhs:?}, right is {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// A structural precondition on an input was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Rigid least-squares fit on a collinear or coincident configuration.
    #[error("degenerate rigid fit: {0}")]
    DegenerateFit(String),

    /// Ground-truth correspondence construction produced zero pairs.
    #[error("no overlap: zero correspondences below threshold {threshold} m")]
    NoOverlap { threshold: f64 },

    /// Grid subsampling emptied a pyramid level.
    #[error("pyramid collapse: layer {layer} subsampled to zero points")]
    PyramidCollapse { layer: usize },

    /// Configuration failed validation; all violations are listed.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at step {step} (pair seed {pair_seed}): {value}")]
    NonFiniteLoss {
        step: usize,
        pair_seed: u64,
        value: f64,
    },

    /// Checkpoint file does not match the model it is loaded into.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
