//! Fully connected (dense) layer over rank-1 tensors.
//!
//! Weights are stored as (n_in, n_out) row-major, so both the forward pass
//! and the input gradient walk contiguous weight rows.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of one dense layer.
#[derive(Clone, Debug)]
pub struct DenseParams {
    /// Weight matrix, shape (n_in, n_out).
    pub weights: Tensor,
    /// One bias per output unit, shape (n_out,).
    pub bias: Tensor,
}

impl DenseParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<DenseParams> {
        if weights.shape().rank() != 2 {
            return Err(Error::InvalidShape(format!(
                "dense weights must be rank 2 (n_in, n_out), got {}",
                weights.shape()
            )));
        }
        let n_out = weights.dims()[1];
        if bias.dims() != [n_out] {
            return Err(Error::ShapeMismatch {
                expected: format!("({n_out})"),
                got: format!("{}", bias.shape()),
            });
        }
        Ok(DenseParams { weights, bias })
    }

    pub fn n_in(&self) -> usize {
        self.weights.dims()[0]
    }
    pub fn n_out(&self) -> usize {
        self.weights.dims()[1]
    }
}

/// Trainable parameter count of a dense layer: `n_in * n_out + n_out`.
pub fn dense_params(n_in: usize, n_out: usize) -> usize {
    n_in * n_out + n_out
}

/// Forward pass: `y = W^T x + b` computed as bias plus a scaled sum of
/// weight rows (skipping rows whose input is exactly zero, which after a
/// ReLU is common).
pub fn dense_forward(input: &Tensor, params: &DenseParams) -> Result<Tensor> {
    if input.dims() != [params.n_in()] {
        return Err(Error::ShapeMismatch {
            expected: format!("({})", params.n_in()),
            got: format!("{}", input.shape()),
        });
    }
    let n_out = params.n_out();
    let w = params.weights.data();
    let mut y = params.bias.data().to_vec();
    for (i, &xi) in input.data().iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * n_out..(i + 1) * n_out];
        for (acc, &wv) in y.iter_mut().zip(row) {
            *acc += xi * wv;
        }
    }
    Tensor::new(&[n_out], y)
}

/// Gradients produced by [`dense_backward`].
#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub dweights: Tensor,
    pub dbias: Tensor,
    pub dinput: Tensor,
}

/// Backward pass: `dW = x ⊗ dy`, `db = dy`, `dx = W dy`.
pub fn dense_backward(input: &Tensor, params: &DenseParams, dout: &Tensor) -> Result<DenseGrads> {
    let mut dweights = Tensor::zeros_like_shape(params.weights.shape());
    let mut dbias = Tensor::zeros_like_shape(params.bias.shape());
    let mut dinput = Tensor::zeros_like_shape(input.shape());
    dense_backward_into(input, params, dout, &mut dweights, &mut dbias, Some(&mut dinput))?;
    Ok(DenseGrads {
        dweights,
        dbias,
        dinput,
    })
}

/// Accumulating backward pass (`+=` into the buffers); pass `None` for
/// `dinput` when the upstream gradient is not needed.
pub fn dense_backward_into(
    input: &Tensor,
    params: &DenseParams,
    dout: &Tensor,
    dweights: &mut Tensor,
    dbias: &mut Tensor,
    dinput: Option<&mut Tensor>,
) -> Result<()> {
    let (n_in, n_out) = (params.n_in(), params.n_out());
    if input.dims() != [n_in] || dout.dims() != [n_out] {
        return Err(Error::ShapeMismatch {
            expected: format!("({n_in}) input and ({n_out}) gradient"),
            got: format!("{} and {}", input.shape(), dout.shape()),
        });
    }
    if dweights.dims() != [n_in, n_out] || dbias.dims() != [n_out] {
        return Err(Error::ShapeMismatch {
            expected: format!("({n_in}, {n_out}) and ({n_out})"),
            got: format!("{} and {}", dweights.shape(), dbias.shape()),
        });
    }
    let g = dout.data();
    for (db, gv) in dbias.data_mut().iter_mut().zip(g) {
        *db += gv;
    }
    let dw = dweights.data_mut();
    for (i, &xi) in input.data().iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &mut dw[i * n_out..(i + 1) * n_out];
        for (d, &gv) in row.iter_mut().zip(g) {
            *d += xi * gv;
        }
    }
    if let Some(dinput) = dinput {
        if dinput.dims() != [n_in] {
            return Err(Error::ShapeMismatch {
                expected: format!("({n_in})"),
                got: format!("{}", dinput.shape()),
            });
        }
        let w = params.weights.data();
        for (i, dxi) in dinput.data_mut().iter_mut().enumerate() {
            let row = &w[i * n_out..(i + 1) * n_out];
            let mut acc = 0.0f32;
            for (&wv, &gv) in row.iter().zip(g) {
                acc += wv * gv;
            }
            *dxi += acc;
        }
    }
    Ok(())
}
