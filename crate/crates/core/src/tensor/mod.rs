//! Dense `f64` tensors and a reverse-mode tape.
//!
//! Every activation in the model lives in a [`Tensor`]. Differentiable
//! computations are recorded on a [`Tape`]; calling [`Tape::backward`] on a
//! scalar node replays the record in reverse and returns exact gradients for
//! every leaf that was registered with `requires_grad`.

mod kernels;
mod tape;

pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid configuration for {op}: {msg}")]
    Config { op: &'static str, msg: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::Config {
                op: "tensor",
                msg: format!("extents must be positive, got {shape:?}"),
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Dimension {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "extents must be positive, got {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a 2-D tensor from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::new(vec![rows.len(), cols], rows.concat()).expect("non-empty rows")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Value at a multi-index; panics when out of bounds.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                acc * d + i
            })
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(TensorError::Dimension {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Keeps rows `0, step, 2*step, ...` of a 2-D tensor.
    pub fn every_nth_row(&self, step: usize) -> Self {
        assert!(step >= 1 && self.rank() == 2);
        let cols = self.shape[1];
        let data: Vec<f64> = self
            .data
            .chunks(cols)
            .step_by(step)
            .flatten()
            .copied()
            .collect();
        let rows = data.len() / cols;
        Self {
            shape: vec![rows, cols],
            data,
        }
    }
}

// Free-function forms of the primitives, evaluated without recording.
// Handy for oracles and tests.

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut t = Tape::new();
    let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
    let y = t.matmul(va, vb)?;
    Ok(t.take(y))
}

pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let y = t.softmax_rows(v, None)?;
    Ok(t.take(y))
}

pub fn conv1d(x: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor> {
    let mut t = Tape::new();
    let (vx, vk, vb) = (
        t.constant(x.clone()),
        t.constant(kernel.clone()),
        t.constant(bias.clone()),
    );
    let y = t.conv1d(vx, vk, vb, dilation)?;
    Ok(t.take(y))
}

pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut t = Tape::new();
    let (vx, vk, vb) = (
        t.constant(x.clone()),
        t.constant(kernel.clone()),
        t.constant(bias.clone()),
    );
    let y = t.conv2d(vx, vk, vb)?;
    Ok(t.take(y))
}

pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut t = Tape::new();
    let (vx, vw, vb) = (
        t.constant(x.clone()),
        t.constant(w.clone()),
        t.constant(b.clone()),
    );
    let y = t.linear(vx, vw, vb)?;
    Ok(t.take(y))
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let mut t = Tape::new();
    let (vx, vg, vb) = (
        t.constant(x.clone()),
        t.constant(gamma.clone()),
        t.constant(beta.clone()),
    );
    let y = t.layer_norm(vx, vg, vb)?;
    Ok(t.take(y))
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let y = t.relu(v);
    t.take(y)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut t = Tape::new();
    let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
    let y = t.add(va, vb)?;
    Ok(t.take(y))
}

/// Mean over axis 1 of a rank-3 tensor `[a×b×c] -> [a×c]`.
pub fn mean_pool(x: &Tensor) -> Result<Tensor> {
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let b = x.shape().get(1).copied().unwrap_or(1);
    let y = t.pool_axis1(v, &vec![1.0 / b as f64; b])?;
    Ok(t.take(y))
}
