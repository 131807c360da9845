//! Dense row-major `f32` tensor.
//!
//! The row-major layout is part of the public contract: checkpoint payload
//! bytes map element-for-element onto [`Tensor::data`], and seeded draws are
//! addressed by row-major element index.

use std::fmt;

use thiserror::Error;

/// Errors raised by tensor construction and the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero extent or no dimensions")]
    DegenerateShape(Vec<usize>),
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {dim} mismatch (expected {expected}, got {actual})")]
    Dim {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: kernel extents must be odd, got {kh}x{kw}")]
    EvenKernel {
        op: &'static str,
        kh: usize,
        kw: usize,
    },
    #[error("{op}: padding {padding} leaves no output for a {kh}x{kw} kernel on {h}x{w} input")]
    EmptyOutput {
        op: &'static str,
        padding: usize,
        kh: usize,
        kw: usize,
        h: usize,
        w: usize,
    },
    #[error("batch_norm: variance of channel {channel} is negative ({value})")]
    NegativeVariance { channel: usize, value: f32 },
    #[error("batch_norm: epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f32),
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected = checked_numel(&shape)?;
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Result<Self, TensorError> {
        let n = checked_numel(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::full(shape, 0.0)
    }

    /// Builds a tensor by evaluating `f` at every row-major element index.
    pub fn from_fn(
        shape: Vec<usize>,
        f: impl FnMut(usize) -> f32,
    ) -> Result<Self, TensorError> {
        let n = checked_numel(&shape)?;
        Ok(Self {
            shape,
            data: (0..n).map(f).collect(),
        })
    }

    pub fn vector(data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Row-major flat offset of a multi-index, or `None` when out of bounds.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0usize;
        for (&i, &extent) in index.iter().zip(&self.shape) {
            if i >= extent {
                return None;
            }
            flat = flat * extent + i;
        }
        Some(flat)
    }

    pub fn get(&self, index: &[usize]) -> Option<f32> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    /// Applies `f` elementwise, keeping the shape.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&self, other: &Tensor) -> Result<Self, TensorError> {
        if self.shape != other.shape {
            return Err(first_dim_mismatch("add", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Keeps the leading `channels` channels of a `[C, H, W]` tensor.
    pub fn truncate_channels(&self, channels: usize) -> Result<Self, TensorError> {
        let [c, h, w] = dims3("truncate_channels", self)?;
        if channels == 0 || channels > c {
            return Err(TensorError::Dim {
                op: "truncate_channels",
                dim: "channels",
                expected: c,
                actual: channels,
            });
        }
        Ok(Self {
            shape: vec![channels, h, w],
            data: self.data[..channels * h * w].to_vec(),
        })
    }

    /// Concatenates rank-1 tensors end to end.
    pub fn concat(parts: &[&Tensor]) -> Result<Self, TensorError> {
        let mut data = Vec::new();
        for part in parts {
            if part.rank() != 1 {
                return Err(TensorError::Rank {
                    op: "concat",
                    expected: 1,
                    shape: part.shape.clone(),
                });
            }
            data.extend_from_slice(&part.data);
        }
        Self::vector(data)
    }

    /// Largest absolute elementwise difference; `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f32> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max),
        )
    }

    /// True when both tensors have the same shape and identical bit patterns.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        let head = &self.data[..self.data.len().min(PREVIEW)];
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("head", &head)
            .finish()
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::DegenerateShape(shape.to_vec()));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| TensorError::DegenerateShape(shape.to_vec()))
}

fn first_dim_mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    if a.len() != b.len() {
        return TensorError::Rank {
            op,
            expected: a.len(),
            shape: b.to_vec(),
        };
    }
    let (expected, actual) = a
        .iter()
        .zip(b)
        .find(|(x, y)| x != y)
        .map(|(x, y)| (*x, *y))
        .unwrap_or((0, 0));
    TensorError::Dim {
        op,
        dim: "extent",
        expected,
        actual,
    }
}

pub(crate) fn dims3(op: &'static str, t: &Tensor) -> Result<[usize; 3], TensorError> {
    match *t.shape() {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(TensorError::Rank {
            op,
            expected: 3,
            shape: t.shape().to_vec(),
        }),
    }
}

pub(crate) fn dims1(op: &'static str, t: &Tensor) -> Result<usize, TensorError> {
    match *t.shape() {
        [n] => Ok(n),
        _ => Err(TensorError::Rank {
            op,
            expected: 1,
            shape: t.shape().to_vec(),
        }),
    }
}
