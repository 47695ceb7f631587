//! Dense tensors with a reverse-mode tape.
//!
//! Every operation on a [`Tape`] records its inputs and the rule needed to
//! propagate gradients back to them. Nodes are appended in evaluation order,
//! so the tape is always topologically sorted and one reverse sweep is enough.

mod array;
mod gradcheck;
mod real;
mod tape;

pub use array::Tensor;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use real::Real;
pub use tape::{Tape, Unary, Var};


use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} elements, got {len}", array::numel(.shape))]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}")]
    Contract(String),
}
