//! Dense multi-dimensional values: the substrate every other module computes on.
//!
//! Tensors are rank 1..=4, row-major (last dimension fastest), stored as f32.
//! Conventions used throughout: an image is (height, width, channels) and a
//! batch is (batch, height, width, channels).

use crate::error::{Error, Result};

/// Validated tensor shape: 1 to 4 dimensions, every dimension at least 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
    count: usize,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Shape> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::InvalidShape(format!(
                "rank must be 1..=4, got {}",
                dims.len()
            )));
        }
        let mut count: usize = 1;
        for &d in dims {
            if d == 0 {
                return Err(Error::InvalidShape(format!("zero dimension in {dims:?}")));
            }
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::InvalidShape(format!("element count overflow in {dims:?}")))?;
        }
        Ok(Shape {
            dims: dims.to_vec(),
            count,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Total number of elements (product of dims).
    pub fn count(&self) -> usize {
        self.count
    }

    /// Flat row-major offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for (i, &x) in idx.iter().enumerate() {
            debug_assert!(x < self.dims[i]);
            off = off * self.dims[i] + x;
        }
        off
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// Reduction mode for [`Tensor::reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Max,
    Mean,
}

/// Contiguous row-major grid of f32 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    /// Build a tensor from explicit values; the length must match the shape.
    pub fn new(dims: &[usize], values: Vec<f32>) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        if values.len() != shape.count() {
            return Err(Error::LengthMismatch {
                expected: shape.count(),
                got: values.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: values,
        })
    }

    /// Build a tensor with every element set to `fill`.
    pub fn filled(dims: &[usize], fill: f32) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        let data = vec![fill; shape.count()];
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Tensor> {
        Tensor::filled(dims, 0.0)
    }

    /// Like [`Tensor::zeros`] for a shape already validated elsewhere.
    pub(crate) fn zeros_like_shape(shape: &Shape) -> Tensor {
        Tensor {
            shape: shape.clone(),
            data: vec![0.0; shape.count()],
        }
    }

    pub(crate) fn from_shape(shape: Shape, data: Vec<f32>) -> Tensor {
        debug_assert_eq!(shape.count(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
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

    pub fn get(&self, idx: &[usize]) -> f32 {
        self.data[self.shape.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f32) {
        let off = self.shape.offset(idx);
        self.data[off] = value;
    }

    /// Same data, new shape; element counts must agree.
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        if shape.count() != self.shape.count() {
            return Err(Error::LengthMismatch {
                expected: self.shape.count(),
                got: shape.count(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Reduce over a set of axes. Reduced dimensions are removed; reducing
    /// every axis yields a single-element rank-1 tensor.
    pub fn reduce(&self, axes: &[usize], mode: Reduce) -> Result<Tensor> {
        let rank = self.shape.rank();
        let mut reduce_axis = [false; 4];
        for &a in axes {
            if a >= rank {
                return Err(Error::AxisOutOfRange { axis: a, rank });
            }
            reduce_axis[a] = true;
        }

        let dims = self.shape.dims();
        let out_dims: Vec<usize> = (0..rank).filter(|&a| !reduce_axis[a]).map(|a| dims[a]).collect();
        let out_shape = if out_dims.is_empty() {
            Shape::new(&[1])?
        } else {
            Shape::new(&out_dims)?
        };

        let reduced_count: usize = (0..rank).filter(|&a| reduce_axis[a]).map(|a| dims[a]).product();
        let init = match mode {
            Reduce::Sum | Reduce::Mean => 0.0f32,
            Reduce::Max => f32::NEG_INFINITY,
        };
        let mut out = vec![init; out_shape.count()];

        let mut idx = [0usize; 4];
        for flat in 0..self.data.len() {
            // Decode the row-major multi-index of `flat`.
            let mut rem = flat;
            for a in (0..rank).rev() {
                idx[a] = rem % dims[a];
                rem /= dims[a];
            }
            let mut out_off = 0;
            for a in 0..rank {
                if !reduce_axis[a] {
                    out_off = out_off * dims[a] + idx[a];
                }
            }
            let v = self.data[flat];
            match mode {
                Reduce::Sum | Reduce::Mean => out[out_off] += v,
                Reduce::Max => {
                    if v > out[out_off] {
                        out[out_off] = v;
                    }
                }
            }
        }

        if mode == Reduce::Mean {
            let inv = 1.0 / reduced_count as f32;
            for v in &mut out {
                *v *= inv;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
        })
    }

    /// True when every element is finite (no NaN/Inf).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
