use std::fmt;
use std::sync::Arc;

use super::scalar::Float;
use crate::error::{Error, Result};

/// Handle to a node on a specific [`Tape`](super::Tape).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct NodeRef {
    pub tape: u64,
    pub idx: usize,
}

/// Immutable n-dimensional array, row-major.
///
/// Cloning is cheap: the element buffer is shared. A tensor that was produced
/// on a recording tape carries a node reference so that `Tape::backward` can
/// route gradients to it; `detach` drops the reference.
#[derive(Clone)]
pub struct Tensor<F: Float> {
    shape: Vec<usize>,
    data: Arc<Vec<F>>,
    pub(crate) node: Option<NodeRef>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn check_finite<F: Float>(op: &'static str, data: &[F]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<F: Float> Tensor<F> {
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::shape("tensor", shape, &[data.len()]));
        }
        check_finite("tensor", &data)?;
        Ok(Self::from_parts(shape.to_vec(), Arc::new(data)))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<Vec<F>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            shape,
            data,
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), Arc::new(vec![F::zero(); numel(shape)]))
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        Self::from_parts(shape.to_vec(), Arc::new(vec![value; numel(shape)]))
    }

    pub fn scalar(value: F) -> Self {
        Self::from_parts(Vec::new(), Arc::new(vec![value]))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| F::from_f64_lossy(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> &Arc<Vec<F>> {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.data.as_ref().clone()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the trailing (channel) axis; 1 for scalars.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<F> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::shape("item", &self.shape, &[]))
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same values, new shape; stays connected to the same tape node.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
            node: self.node,
        })
    }

    /// Same values with no gradient connection.
    pub fn detach(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn cast<G: Float>(&self) -> Tensor<G> {
        Tensor::from_parts(
            self.shape.clone(),
            Arc::new(self.data.iter().map(|v| G::from_f64_lossy(v.as_f64())).collect()),
        )
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Result<Self> {
        Self::new(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Row `i` when the tensor is viewed as `[numel / last_dim, last_dim]`.
    pub fn row(&self, i: usize) -> &[F] {
        let c = self.last_dim();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn max_abs_diff(&self, other: &Tensor<F>) -> Result<F> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (*a - *b).abs())
            .fold(F::zero(), F::max))
    }
}

impl<F: Float> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<F> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<F: Float> PartialEq for Tensor<F> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}
