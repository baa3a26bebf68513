//! Dense tensors with a recorded forward pass and reverse-mode gradients.
//!
//! Every network and loss in the crate is written against [`Recording`]:
//! register parameters with [`Recording::leaf`], compose primitives, then call
//! [`Recording::backward`] on the scalar result. Values are `f64` throughout.

mod gradcheck;
mod kernels;
mod primitive;
mod recording;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, REL_ERROR_FLOOR};
pub use primitive::Primitive;
pub use recording::{Gradients, Recording};
pub use tensor::{NodeId, Tensor};

/// Slope of every leaky ReLU in the crate.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("{primitive}: incompatible shapes {shapes:?}")]
    ShapeMismatch {
        primitive: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{primitive}: expected {expected} inputs, got {got}")]
    Arity {
        primitive: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("shape {0:?} has a zero-sized dimension")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not hold {len} values")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss was not produced by this recording")]
    LossNotRecorded,
    #[error("function is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
