//! Dense tensors and a reverse-mode gradient tape.
//!
//! Values are row-major buffers of [`Float`]. Every trainable layer in the
//! crate is assembled from the operations on [`Graph`]; parameters live in a
//! [`ParamStore`] and are copied onto a fresh tape for each forward pass.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod param;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use graph::{Axis, Grads, Graph, Var};
pub use param::{init_uniform, ParamStore, Parameter};

use std::fmt;

use thiserror::Error;

/// Scalar type of every tensor value.
#[cfg(not(feature = "f64"))]
pub type Float = f32;
/// Scalar type of every tensor value.
#[cfg(feature = "f64")]
pub type Float = f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for extent {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("contract violated: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense row-major value.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Float>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Float>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: Float) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: Float) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds an `m x n` matrix from nested rows.
    pub fn from_rows(rows: &[Vec<Float>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(m * n);
        for row in rows {
            if row.len() != n {
                return Err(TensorError::Shape {
                    op: "from_rows",
                    lhs: vec![m, n],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![m, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Float] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Float] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Float> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(TensorError::Domain {
                op: "dims2",
                msg: format!("expected a matrix, got shape {:?}", self.shape),
            }),
        }
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Single element of a scalar tensor.
    pub fn item(&self) -> Float {
        self.data[0]
    }

    /// Element `(i, j)` of a matrix.
    pub fn at(&self, i: usize, j: usize) -> Float {
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[Float] {
        let n = self.shape[self.shape.len() - 1];
        &self.data[i * n..(i + 1) * n]
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Float {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Float::max)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        let shown = &self.data[..self.data.len().min(PREVIEW)];
        write!(f, "{shown:?}")?;
        if self.data.len() > PREVIEW {
            write!(f, " ... ({} values)", self.data.len())?;
        }
        Ok(())
    }
}

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

#[cfg(test)]
mod op_tests;
