//! 2-D convolution over (height, width, channels) tensors.
//!
//! Kernels are stored as (kh, kw, c_in, c_out); convolution is "valid" by
//! default with optional symmetric zero padding. The forward pass copies the
//! kernels into filter-major rows once and then reduces each gathered input
//! patch with a plain dot product, parallelized over output rows (disjoint
//! writes, so results are bit-stable regardless of thread count).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Parameters of one convolution layer.
#[derive(Clone, Debug)]
pub struct ConvParams {
    /// Filter bank, shape (kh, kw, c_in, c_out).
    pub kernels: Tensor,
    /// One bias per output channel, shape (c_out,).
    pub bias: Tensor,
    /// Row / column step between output positions.
    pub stride: (usize, usize),
    /// Symmetric zero padding added to each border (rows, cols).
    pub padding: (usize, usize),
}

impl ConvParams {
    /// Validate shapes and build the parameter set. Stride components must
    /// be nonzero; padding may be zero (the default "valid" convolution).
    pub fn new(
        kernels: Tensor,
        bias: Tensor,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<ConvParams> {
        if kernels.shape().rank() != 4 {
            return Err(Error::InvalidShape(format!(
                "convolution kernels must be rank 4 (kh, kw, c_in, c_out), got {}",
                kernels.shape()
            )));
        }
        let c_out = kernels.dims()[3];
        if bias.dims() != [c_out] {
            return Err(Error::ShapeMismatch {
                expected: format!("({c_out})"),
                got: format!("{}", bias.shape()),
            });
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidShape(format!(
                "stride components must be nonzero, got {stride:?}"
            )));
        }
        Ok(ConvParams {
            kernels,
            bias,
            stride,
            padding,
        })
    }

    pub fn kh(&self) -> usize {
        self.kernels.dims()[0]
    }
    pub fn kw(&self) -> usize {
        self.kernels.dims()[1]
    }
    pub fn c_in(&self) -> usize {
        self.kernels.dims()[2]
    }
    pub fn c_out(&self) -> usize {
        self.kernels.dims()[3]
    }
}

/// Trainable parameter count of a convolution layer:
/// `kh * kw * c_in * c_out` kernel weights plus `c_out` biases.
pub fn conv2d_params(kh: usize, kw: usize, c_in: usize, c_out: usize) -> usize {
    kh * kw * c_in * c_out + c_out
}

/// Output shape of a convolution: for each spatial axis
/// `out = floor((in + 2*pad - k) / stride) + 1`, channels become `c_out`.
pub fn conv2d_out_shape(input: &Shape, params: &ConvParams) -> Result<Shape> {
    let dims = input.dims();
    if dims.len() != 3 {
        return Err(Error::InvalidShape(format!(
            "convolution input must be rank 3 (h, w, c), got {input}"
        )));
    }
    let (h, w, c_in) = (dims[0], dims[1], dims[2]);
    if c_in != params.c_in() {
        return Err(Error::ShapeMismatch {
            expected: format!("input with {} channels", params.c_in()),
            got: format!("{input}"),
        });
    }
    let (kh, kw) = (params.kh(), params.kw());
    let (ph, pw) = params.padding;
    if kh > h + 2 * ph || kw > w + 2 * pw {
        return Err(Error::FilterTooLarge {
            filter: kh,
            filter_w: kw,
            in_h: h + 2 * ph,
            in_w: w + 2 * pw,
        });
    }
    let h_out = (h + 2 * ph - kh) / params.stride.0 + 1;
    let w_out = (w + 2 * pw - kw) / params.stride.1 + 1;
    Shape::new(&[h_out, w_out, params.c_out()])
}

/// Copy the input window for output position (i, j) into `patch`, laid out
/// (kh, kw, c_in) row-major with zeros where the window falls in the padded
/// border.
#[inline]
fn gather_patch(
    patch: &mut [f32],
    input: &[f32],
    (h, w, c): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    i: usize,
    j: usize,
) {
    let row_len = kw * c;
    for r in 0..kh {
        let seg = &mut patch[r * row_len..(r + 1) * row_len];
        let y = (i * sh + r) as isize - ph as isize;
        if y < 0 || y >= h as isize {
            seg.fill(0.0);
            continue;
        }
        let x0 = (j * sw) as isize - pw as isize;
        if x0 >= 0 && x0 as usize + kw <= w {
            // Fully interior: one contiguous run of kw*c values.
            let base = (y as usize * w + x0 as usize) * c;
            seg.copy_from_slice(&input[base..base + row_len]);
        } else {
            seg.fill(0.0);
            for cc in 0..kw {
                let x = x0 + cc as isize;
                if x >= 0 && (x as usize) < w {
                    let base = (y as usize * w + x as usize) * c;
                    seg[cc * c..(cc + 1) * c].copy_from_slice(&input[base..base + c]);
                }
            }
        }
    }
}

/// Forward convolution of a single (h, w, c_in) image, producing
/// (h_out, w_out, c_out). Plain f32 dot products; no activation applied.
pub fn conv2d_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let out_shape = conv2d_out_shape(input.shape(), params)?;
    let [h, w, c]: [usize; 3] = input.dims().try_into().expect("rank checked");
    let (kh, kw, c_out) = (params.kh(), params.kw(), params.c_out());
    let w_out = out_shape.dims()[1];
    let patch_len = kh * kw * c;

    // Filter-major kernel copy: row f holds filter f as one contiguous
    // (kh, kw, c_in) block, so the inner loop is a straight dot product.
    let kdata = params.kernels.data();
    let mut filters = vec![0.0f32; c_out * patch_len];
    for p in 0..patch_len {
        let src = &kdata[p * c_out..(p + 1) * c_out];
        for (f, &v) in src.iter().enumerate() {
            filters[f * patch_len + p] = v;
        }
    }

    let bias = params.bias.data();
    let in_data = input.data();
    let mut out = vec![0.0f32; out_shape.count()];
    out.par_chunks_mut(w_out * c_out)
        .enumerate()
        .for_each_init(
            || vec![0.0f32; patch_len],
            |patch, (i, out_row)| {
                for j in 0..w_out {
                    gather_patch(
                        patch,
                        in_data,
                        (h, w, c),
                        (kh, kw),
                        params.stride,
                        params.padding,
                        i,
                        j,
                    );
                    for f in 0..c_out {
                        let frow = &filters[f * patch_len..(f + 1) * patch_len];
                        let mut acc = bias[f];
                        for (kv, pv) in frow.iter().zip(patch.iter()) {
                            acc += kv * pv;
                        }
                        out_row[j * c_out + f] = acc;
                    }
                }
            },
        );
    Ok(Tensor::from_shape(out_shape, out))
}

/// Gradients produced by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub dkernels: Tensor,
    pub dbias: Tensor,
    pub dinput: Tensor,
}

/// Backward convolution: given the input, parameters, and the gradient at
/// the output, return gradients for kernels, bias, and input.
pub fn conv2d_backward(input: &Tensor, params: &ConvParams, dout: &Tensor) -> Result<ConvGrads> {
    let mut dkernels = Tensor::zeros_like_shape(params.kernels.shape());
    let mut dbias = Tensor::zeros_like_shape(params.bias.shape());
    let mut dinput = Tensor::zeros_like_shape(input.shape());
    conv2d_backward_into(input, params, dout, &mut dkernels, &mut dbias, Some(&mut dinput))?;
    Ok(ConvGrads {
        dkernels,
        dbias,
        dinput,
    })
}

/// Accumulating backward pass: adds this sample's gradients into the given
/// buffers (`+=`), which lets a training loop sum over a batch without
/// per-sample allocations. Pass `None` for `dinput` at the first layer.
pub fn conv2d_backward_into(
    input: &Tensor,
    params: &ConvParams,
    dout: &Tensor,
    dkernels: &mut Tensor,
    dbias: &mut Tensor,
    dinput: Option<&mut Tensor>,
) -> Result<()> {
    let out_shape = conv2d_out_shape(input.shape(), params)?;
    if dout.dims() != out_shape.dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("{out_shape}"),
            got: format!("{}", dout.shape()),
        });
    }
    if dkernels.dims() != params.kernels.dims() || dbias.dims() != params.bias.dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} and {}", params.kernels.shape(), params.bias.shape()),
            got: format!("{} and {}", dkernels.shape(), dbias.shape()),
        });
    }

    let [h, w, c]: [usize; 3] = input.dims().try_into().expect("rank checked");
    let (kh, kw, c_out) = (params.kh(), params.kw(), params.c_out());
    let (h_out, w_out) = (out_shape.dims()[0], out_shape.dims()[1]);
    let (sh, sw) = params.stride;
    let (ph, pw) = params.padding;
    let patch_len = kh * kw * c;
    let in_data = input.data();
    let g = dout.data();

    // dbias[f] = sum of dout over all spatial positions.
    {
        let db = dbias.data_mut();
        for pos in 0..h_out * w_out {
            for (f, dbf) in db.iter_mut().enumerate() {
                *dbf += g[pos * c_out + f];
            }
        }
    }

    // dkernels: accumulate per filter into filter-major scratch (disjoint
    // rows, parallel over f), then scatter back into (kh, kw, c_in, c_out).
    {
        let mut dkf = vec![0.0f32; c_out * patch_len];
        dkf.par_chunks_mut(patch_len).enumerate().for_each(|(f, dk_f)| {
            let row_len = kw * c;
            for i in 0..h_out {
                for j in 0..w_out {
                    let gv = g[(i * w_out + j) * c_out + f];
                    if gv == 0.0 {
                        continue;
                    }
                    for r in 0..kh {
                        let y = (i * sh + r) as isize - ph as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let x0 = (j * sw) as isize - pw as isize;
                        if x0 >= 0 && x0 as usize + kw <= w {
                            let base = (y as usize * w + x0 as usize) * c;
                            let src = &in_data[base..base + row_len];
                            let dst = &mut dk_f[r * row_len..(r + 1) * row_len];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += gv * s;
                            }
                        } else {
                            for cc in 0..kw {
                                let x = x0 + cc as isize;
                                if x < 0 || x >= w as isize {
                                    continue;
                                }
                                let base = (y as usize * w + x as usize) * c;
                                let dst = &mut dk_f[(r * kw + cc) * c..(r * kw + cc + 1) * c];
                                for (d, s) in dst.iter_mut().zip(&in_data[base..base + c]) {
                                    *d += gv * s;
                                }
                            }
                        }
                    }
                }
            }
        });
        let dk = dkernels.data_mut();
        for p in 0..patch_len {
            for f in 0..c_out {
                dk[p * c_out + f] += dkf[f * patch_len + p];
            }
        }
    }

    // dinput[y, x, ci] = sum over windows covering (y, x) of
    // kernels[r, cc, ci, :] . dout[i, j, :]; parallel over input rows.
    if let Some(dinput) = dinput {
        if dinput.dims() != input.dims() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}", input.shape()),
                got: format!("{}", dinput.shape()),
            });
        }
        let kdata = params.kernels.data();
        dinput
            .data_mut()
            .par_chunks_mut(w * c)
            .enumerate()
            .for_each(|(y, dx_row)| {
                for i in 0..h_out {
                    let r = y as isize + ph as isize - (i * sh) as isize;
                    if r < 0 || r >= kh as isize {
                        continue;
                    }
                    let r = r as usize;
                    for j in 0..w_out {
                        let grow = &g[(i * w_out + j) * c_out..(i * w_out + j + 1) * c_out];
                        for cc in 0..kw {
                            let x = (j * sw + cc) as isize - pw as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            let x = x as usize;
                            let kbase = ((r * kw + cc) * c) * c_out;
                            for ci in 0..c {
                                let krow = &kdata[kbase + ci * c_out..kbase + (ci + 1) * c_out];
                                let mut acc = 0.0f32;
                                for (kv, gv) in krow.iter().zip(grow) {
                                    acc += kv * gv;
                                }
                                dx_row[x * c + ci] += acc;
                            }
                        }
                    }
                }
            });
    }
    Ok(())
}
