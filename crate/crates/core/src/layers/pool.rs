//! 2-D max pooling over (height, width, channels) tensors.
//!
//! The forward pass also returns an argmax map — for every output element,
//! the flat row-major index of the input element that won its window — which
//! makes the backward pass a plain scatter-add. Ties go to the first
//! occurrence in row-major window order.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Parameters of one max-pooling layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolParams {
    /// Window extent (rows, cols).
    pub pool: (usize, usize),
    /// Step between windows; defaults to the window extent.
    pub stride: (usize, usize),
}

impl PoolParams {
    pub fn new(pool: (usize, usize), stride: Option<(usize, usize)>) -> Result<PoolParams> {
        let stride = stride.unwrap_or(pool);
        if pool.0 == 0 || pool.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidShape(format!(
                "pool {pool:?} and stride {stride:?} components must be nonzero"
            )));
        }
        Ok(PoolParams { pool, stride })
    }
}

/// Output shape of max pooling: for each spatial axis
/// `out = floor((in - pool) / stride) + 1`, channels unchanged.
pub fn maxpool_out_shape(input: &Shape, params: &PoolParams) -> Result<Shape> {
    let dims = input.dims();
    if dims.len() != 3 {
        return Err(Error::InvalidShape(format!(
            "pooling input must be rank 3 (h, w, c), got {input}"
        )));
    }
    let (h, w, c) = (dims[0], dims[1], dims[2]);
    let (fh, fw) = params.pool;
    if fh > h || fw > w {
        return Err(Error::FilterTooLarge {
            filter: fh,
            filter_w: fw,
            in_h: h,
            in_w: w,
        });
    }
    let h_out = (h - fh) / params.stride.0 + 1;
    let w_out = (w - fw) / params.stride.1 + 1;
    Shape::new(&[h_out, w_out, c])
}

/// Forward max pooling. Returns the pooled tensor plus, per output element,
/// the flat index into the input of the winning value.
pub fn maxpool_forward(input: &Tensor, params: &PoolParams) -> Result<(Tensor, Vec<u32>)> {
    let out_shape = maxpool_out_shape(input.shape(), params)?;
    if input.shape().count() > u32::MAX as usize {
        return Err(Error::InvalidShape(format!(
            "pooling input too large to index with u32: {}",
            input.shape()
        )));
    }
    let [_, w, c]: [usize; 3] = input.dims().try_into().expect("rank checked");
    let (h_out, w_out) = (out_shape.dims()[0], out_shape.dims()[1]);
    let (fh, fw) = params.pool;
    let (sh, sw) = params.stride;
    let data = input.data();

    let mut out = vec![0.0f32; out_shape.count()];
    let mut argmax = vec![0u32; out_shape.count()];
    for i in 0..h_out {
        for j in 0..w_out {
            for ci in 0..c {
                // First element of the window seeds the scan; strict `>`
                // afterwards keeps the first occurrence on ties.
                let mut best_idx = ((i * sh) * w + j * sw) * c + ci;
                let mut best = data[best_idx];
                for r in 0..fh {
                    for cc in 0..fw {
                        let idx = ((i * sh + r) * w + (j * sw + cc)) * c + ci;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (i * w_out + j) * c + ci;
                out[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
    Ok((Tensor::from_shape(out_shape, out), argmax))
}

/// Backward max pooling: route each output gradient to the input element
/// that won the window. Overlapping windows accumulate.
pub fn maxpool_backward(argmax: &[u32], dout: &Tensor, input_shape: &Shape) -> Result<Tensor> {
    if argmax.len() != dout.shape().count() {
        return Err(Error::LengthMismatch {
            expected: dout.shape().count(),
            got: argmax.len(),
        });
    }
    let mut dx = Tensor::zeros_like_shape(input_shape);
    let buf = dx.data_mut();
    for (g, &a) in dout.data().iter().zip(argmax) {
        let a = a as usize;
        if a >= buf.len() {
            return Err(Error::InvalidShape(format!(
                "argmax index {a} out of range for input {input_shape}"
            )));
        }
        buf[a] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example_pooling() {
        // The 3x3 convolution output pooled with a 2x2 window at stride 1.
        let input = Tensor::new(
            &[3, 3, 1],
            vec![81.6, 86.1, 90.6, 104.1, 108.6, 113.1, 126.6, 131.1, 135.6],
        )
        .unwrap();
        let p = PoolParams::new((2, 2), Some((1, 1))).unwrap();
        let (out, _) = maxpool_forward(&input, &p).unwrap();
        assert_eq!(out.dims(), &[2, 2, 1]);
        assert_eq!(out.data(), &[108.6, 113.1, 131.1, 135.6]);
    }

    #[test]
    fn stride_defaults_to_window() {
        let p = PoolParams::new((2, 2), None).unwrap();
        assert_eq!(p.stride, (2, 2));
        // The network's two pooling stages.
        let s1 = maxpool_out_shape(&Shape::new(&[126, 126, 128]).unwrap(), &p).unwrap();
        assert_eq!(s1.dims(), &[63, 63, 128]);
        let s2 = maxpool_out_shape(&Shape::new(&[61, 61, 256]).unwrap(), &p).unwrap();
        assert_eq!(s2.dims(), &[30, 30, 256]);
    }

    #[test]
    fn ties_pick_first_in_row_major_order() {
        let input = Tensor::filled(&[2, 2, 1], 5.0).unwrap();
        let p = PoolParams::new((2, 2), None).unwrap();
        let (out, argmax) = maxpool_forward(&input, &p).unwrap();
        assert_eq!(out.data(), &[5.0]);
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn overlapping_windows_hand_traced() {
        // 3x3 input, 2x2 window, stride 1: the value 4 at (1,0) wins three
        // windows (its duplicate at (1,1) loses ties), and 9 wins the last.
        let input =
            Tensor::new(&[3, 3, 1], vec![1.0, 3.0, 2.0, 4.0, 4.0, 0.0, 1.0, 2.0, 9.0]).unwrap();
        let p = PoolParams::new((2, 2), Some((1, 1))).unwrap();
        let (out, argmax) = maxpool_forward(&input, &p).unwrap();
        assert_eq!(out.data(), &[4.0, 4.0, 4.0, 9.0]);
        assert_eq!(argmax, vec![3, 4, 3, 8]);

        // Backward with all-ones gradient: (1,0) collected two windows.
        let dout = Tensor::filled(&[2, 2, 1], 1.0).unwrap();
        let dx = maxpool_backward(&argmax, &dout, input.shape()).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn per_channel_independence() {
        // Two channels with opposite orderings pool independently.
        let input = Tensor::new(
            &[2, 2, 2],
            vec![1.0, 8.0, 2.0, 7.0, 3.0, 6.0, 4.0, 5.0],
        )
        .unwrap();
        let p = PoolParams::new((2, 2), None).unwrap();
        let (out, _) = maxpool_forward(&input, &p).unwrap();
        assert_eq!(out.data(), &[4.0, 8.0]);
    }

    #[test]
    fn window_larger_than_input_is_error() {
        let p = PoolParams::new((3, 3), None).unwrap();
        let err = maxpool_out_shape(&Shape::new(&[2, 2, 1]).unwrap(), &p).unwrap_err();
        assert!(matches!(err, Error::FilterTooLarge { .. }));
    }

    proptest! {
        // Every pooled value is a member of the input, and the argmax map
        // points exactly at it.
        #[test]
        fn outputs_are_window_members(values in proptest::collection::vec(-100.0f32..100.0, 36)) {
            let input = Tensor::new(&[6, 6, 1], values).unwrap();
            let p = PoolParams::new((2, 2), None).unwrap();
            let (out, argmax) = maxpool_forward(&input, &p).unwrap();
            for (o, &a) in out.data().iter().zip(&argmax) {
                prop_assert_eq!(*o, input.data()[a as usize]);
            }
        }

        // The gradient mass is conserved: sum(dx) == sum(dout).
        #[test]
        fn backward_conserves_gradient_mass(values in proptest::collection::vec(-10.0f32..10.0, 16)) {
            let input = Tensor::new(&[4, 4, 1], values).unwrap();
            let p = PoolParams::new((2, 2), None).unwrap();
            let (out, argmax) = maxpool_forward(&input, &p).unwrap();
            let dout = Tensor::filled(&[2, 2, 1], 1.0).unwrap();
            let dx = maxpool_backward(&argmax, &dout, input.shape()).unwrap();
            let total: f32 = dx.data().iter().sum();
            prop_assert!((total - out.shape().count() as f32).abs() < 1e-5);
        }
    }
}
