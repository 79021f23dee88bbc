//! Layer primitives: convolution, max-pooling, dense, ReLU, and flatten.
//!
//! Each layer exposes a pure forward pass plus an explicit backward pass
//! that returns (or accumulates into) gradients with the same shapes as the
//! corresponding inputs and parameters. Nothing here owns training state;
//! the model graph wires these together and the optimizer consumes the
//! gradients.

mod conv;
mod dense;
mod pool;

pub use conv::{
    conv2d_backward, conv2d_backward_into, conv2d_forward, conv2d_out_shape, conv2d_params,
    ConvGrads, ConvParams,
};
pub use dense::{
    dense_backward, dense_backward_into, dense_forward, dense_params, DenseGrads, DenseParams,
};
pub use pool::{maxpool_backward, maxpool_forward, maxpool_out_shape, PoolParams};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_in_place(&mut out);
    out
}

/// In-place variant of [`relu`] for hot paths.
pub fn relu_in_place(t: &mut Tensor) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Backward pass of ReLU given the *post-activation* values.
///
/// Because `relu(x) > 0` exactly when `x > 0`, the mask can be read off the
/// outputs; no pre-activation cache is needed. The subgradient at zero is
/// taken as zero.
pub fn relu_backward(post_activation: &Tensor, dout: &Tensor) -> Result<Tensor> {
    if post_activation.dims() != dout.dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}", post_activation.shape()),
            got: format!("{}", dout.shape()),
        });
    }
    let mut dx = dout.clone();
    for (g, y) in dx.data_mut().iter_mut().zip(post_activation.data()) {
        if *y <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(dx)
}

/// Collapse any tensor into rank 1, preserving row-major order.
pub fn flatten(input: &Tensor) -> Tensor {
    input
        .reshape(&[input.shape().count()])
        .expect("same element count")
}
