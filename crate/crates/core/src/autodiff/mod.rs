//! Minimal dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] records a closed vocabulary of 2-D primitives
//! ([`PrimitiveKind`]) as they execute; [`Tape::backward`] walks the record in
//! exact reverse order. Storage is generic over [`Element`] so that models run
//! in `f32` while gradient checks run the very same code in `f64`.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Gradients, SparseRows, Tape, Var};
pub use tensor::{Element, Tensor};

use thiserror::Error;

/// The primitive vocabulary. Every model layer is composed from these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    MatMul,
    /// Addition with `[1 x cols]` row broadcast.
    Add,
    /// Product with row, column or scalar broadcast.
    ElementwiseMul,
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
    Gather,
    ScatterAddRows,
    /// Product with a fixed sparse matrix given as weighted row moves.
    SparseMatMul,
    SegmentSoftmax,
    MeanPoolRows,
    Dropout,
    Mse,
    Reshape,
    ConcatCols,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {kind:?}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        kind: PrimitiveKind,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("row index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid attribute: {0}")]
    InvalidAttribute(String),
    #[error("loss must be a 1x1 tensor, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("function is not finite at probe coordinate {0}")]
    NonFiniteProbe(usize),
}
