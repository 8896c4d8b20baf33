//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine is deliberately small: a [`Tape`] records a fixed set of
//! operations chosen to cover the correspondence network (per-point linear
//! maps, grouped maps, pointwise nonlinearities, axis reductions, softmax
//! over points, and a differentiable smallest-eigenvector solve), then
//! replays them in reverse to accumulate gradients. Tapes are single-threaded
//! and independent of each other; parameters live outside the tape in a
//! [`ParameterStore`] and are re-inserted as leaves for every forward pass.

mod adam;
mod checkpoint;
mod eigen;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry, CHECKPOINT_MAGIC};
pub use eigen::{smallest_eigpair, sym_eig};
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{ParamEntry, ParameterStore};
pub use tape::{Mode, NodeId, Tape};
pub use tensor::Tensor;

/// Errors raised by tape construction, backpropagation, or the optimizer.
#[derive(Debug, thiserror::Error)]
pub enum AdError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: invalid operand: {detail}")]
    InvalidOperand { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward seed must be a scalar node, got shape {shape:?}")]
    NotScalar { shape: (usize, usize) },
    #[error("degenerate spectrum: eigengap {gap:.3e} below tolerance {tol:.3e}")]
    DegenerateSpectrum { gap: f64, tol: f64 },
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}
