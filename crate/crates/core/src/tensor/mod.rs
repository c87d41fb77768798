//! Dense f64 tensors with tape-recorded reverse-mode differentiation.

pub mod gradcheck;
pub mod kernels;
mod tape;

pub use tape::{Tape, Tensor, TensorId};

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("{op}: numeric domain violation: {detail}")]
    NumericDomain { op: &'static str, detail: String },

    #[error("axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange { axis: usize, shape: Vec<usize> },

    #[error("{op}: expected a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },

    #[error("{op}: expected {expected} values, got {got}")]
    LengthMismatch { op: &'static str, expected: usize, got: usize },

    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },

    #[error("tape already swept backward; build a new tape")]
    BackwardConsumed,
}
