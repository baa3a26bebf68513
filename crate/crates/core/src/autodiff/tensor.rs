use std::fmt;
use std::sync::Arc;

use super::AutodiffError;

/// Index of a node inside a [`Recording`](super::Recording).
pub type NodeId = usize;

/// Dense row-major array of `f64` values.
///
/// Values are shared behind an `Arc`, so cloning a tensor is cheap and a
/// finished tensor can be read from several threads. A tensor that takes
/// part in a recorded computation carries the id of the node that produced
/// it.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Arc<Vec<f64>>,
    requires_grad: bool,
    node_id: Option<NodeId>,
    // id of the recording that owns `node_id`
    origin: u64,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, AutodiffError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(AutodiffError::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(AutodiffError::LengthMismatch {
                shape,
                len: values.len(),
            });
        }
        Ok(Self::from_parts(shape, Arc::new(values)))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, values: Arc<Vec<f64>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            shape,
            values,
            requires_grad: false,
            node_id: None,
            origin: 0,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), Arc::new(vec![value]))
    }

    pub fn vector(values: Vec<f64>) -> Result<Self, AutodiffError> {
        let n = values.len();
        Self::new(vec![n], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], values)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), Arc::new(vec![0.0; n]))
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), Arc::new(vec![value; n]))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_arc(&self) -> &Arc<Vec<f64>> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Number of rows when viewed as a matrix (a vector is a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Width of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols() + j]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node_id
    }

    pub(crate) fn with_node(mut self, node: NodeId, origin: u64) -> Self {
        self.node_id = Some(node);
        self.requires_grad = true;
        self.origin = origin;
        self
    }

    pub(crate) fn origin(&self) -> u64 {
        self.origin
    }

    /// Marks the tensor as a gradient source without attaching it to a recording.
    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// Same values, cut off from any recording.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.shape.clone(), Arc::clone(&self.values))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.as_ref().clone()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of shape and values.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.values.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("values", &preview)
            .field("requires_grad", &self.requires_grad)
            .field("node_id", &self.node_id)
            .finish()
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.values == other.values
    }
}
