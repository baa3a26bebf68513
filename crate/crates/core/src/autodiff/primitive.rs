use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::AutodiffError;

/// Operations a [`Recording`](super::Recording) knows how to differentiate.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[m, k] x [k, n] -> [m, n]`
    MatMul,
    Add,
    Sub,
    Mul,
    /// Adds a length-`n` vector to every row of an `[m, n]` matrix.
    AddBias,
    Scale(f64),
    AddScalar(f64),
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Exp,
    Log,
    /// Log-softmax over the last axis.
    LogSoftmax,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Sum,
    Mean,
    L1Norm,
    SquaredL2,
    /// Elementwise product with a caller-supplied mask.
    Dropout(Arc<Vec<f64>>),
    Transpose,
    /// `[m, n] -> [m, 1]`
    RowSum,
    /// `[m, n] -> [m, 1]`, gradient routed to the first maximal entry.
    RowMax,
    /// Euclidean norm of each row, `[m, n] -> [m, 1]`.
    RowNorm,
    /// Scales every row to unit Euclidean norm.
    NormalizeRows,
    GatherRows(Arc<Vec<usize>>),
    Reshape(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::AddBias => "add_bias",
            Primitive::Scale(_) => "scale",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::Relu => "relu",
            Primitive::LeakyRelu(_) => "leaky_relu",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::LogSoftmax => "log_softmax",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::L1Norm => "l1_norm",
            Primitive::SquaredL2 => "squared_l2",
            Primitive::Dropout(_) => "dropout",
            Primitive::Transpose => "transpose",
            Primitive::RowSum => "row_sum",
            Primitive::RowMax => "row_max",
            Primitive::RowNorm => "row_norm",
            Primitive::NormalizeRows => "normalize_rows",
            Primitive::GatherRows(_) => "gather_rows",
            Primitive::Reshape(_) => "reshape",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses the attribute-free primitives by name. Primitives that carry
/// attributes (slopes, masks, indices, axes) must be built directly.
impl FromStr for Primitive {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "matmul" => Primitive::MatMul,
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "add_bias" => Primitive::AddBias,
            "relu" => Primitive::Relu,
            "tanh" => Primitive::Tanh,
            "sigmoid" => Primitive::Sigmoid,
            "exp" => Primitive::Exp,
            "log" => Primitive::Log,
            "log_softmax" => Primitive::LogSoftmax,
            "sum" => Primitive::Sum,
            "mean" => Primitive::Mean,
            "l1_norm" => Primitive::L1Norm,
            "squared_l2" => Primitive::SquaredL2,
            "transpose" => Primitive::Transpose,
            "row_sum" => Primitive::RowSum,
            "row_max" => Primitive::RowMax,
            "row_norm" => Primitive::RowNorm,
            "normalize_rows" => Primitive::NormalizeRows,
            other => return Err(AutodiffError::UnknownPrimitive(other.to_string())),
        })
    }
}
