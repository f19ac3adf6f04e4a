//! Minimal dense-array computation core with reverse-mode gradient
//! accumulation. Double precision throughout; every differentiable op is
//! verifiable against central finite differences.

mod array;
mod checkpoint;
mod fd;
mod param;
mod tape;

pub use array::{matmul, matmul_nt, matmul_tn, Array};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use fd::finite_difference_check;
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{BackwardStats, Tape, TapeOp, ValueId, LAYER_NORM_EPS};
