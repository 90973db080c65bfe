//! Dense multi-dimensional arrays with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a plain row-major value; tracked computation goes through a
//! [`Tape`], which records every operation and replays it in reverse to
//! accumulate gradients. Images use the `[N, C, H, W]` layout.

mod kernels;
mod tape;

pub use tape::{Activation, ElemKind, Tape, TensorId, LEAKY_SLOPE};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
    #[error("expected rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch { expected: usize, shape: Vec<usize> },
    #[error("effective kernel {kernel}x{kernel2} exceeds padded input {padded}x{padded2}")]
    KernelTooLarge {
        kernel: usize,
        kernel2: usize,
        padded: usize,
        padded2: usize,
    },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("spatial dims {h}x{w} must be even for 2x2 pooling")]
    OddSpatial { h: usize, w: usize },
    #[error("channel count {channels} not divisible by r^2 = {rsq}")]
    ChannelsNotDivisible { channels: usize, rsq: usize },
    #[error("backward root must be a scalar, got {numel} elements")]
    NonScalarRoot { numel: usize },
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },
}

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Single stored value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn assert_finite(&self, context: &str) -> Result<(), TensorError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite {
                context: context.to_string(),
            })
        }
    }

    /// Dimensions of an `[N, C, H, W]` image tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize), TensorError> {
        if self.shape.len() != 4 {
            return Err(TensorError::RankMismatch {
                expected: 4,
                shape: self.shape.clone(),
            });
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::LengthMismatch { len: 5, .. }));
    }

    #[test]
    fn numel_matches_shape_product() {
        let t = Tensor::zeros(vec![2, 3, 4]);
        assert_eq!(t.numel(), 24);
        assert_eq!(t.data().len(), 24);
    }

    #[test]
    fn finiteness_check() {
        let mut t = Tensor::zeros(vec![2]);
        assert!(t.assert_finite("x").is_ok());
        t.data_mut()[1] = f64::NAN;
        assert!(t.assert_finite("x").is_err());
    }
}
