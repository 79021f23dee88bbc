//! Shared helpers for integration tests: independent 64-bit reference
//! implementations of every differentiable op (naive loops, no shared code
//! with the library), a central finite-difference driver, and synthetic
//! dataset writers.

#![allow(dead_code)]

use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slimcnn::model::{Model, ModelBuilder};
use slimcnn::render::RgbImage;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    let dist = Uniform::new(lo, hi);
    (0..n).map(|_| dist.sample(rng)).collect()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Naive 64-bit convolution: input (h, w, c_in), kernels
/// (kh, kw, c_in, c_out), zero padding, "valid" windows only.
pub fn conv2d_oracle(
    x: &[f64],
    (h, w, c_in): (usize, usize, usize),
    k: &[f64],
    (kh, kw, c_out): (usize, usize, usize),
    b: &[f64],
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> (Vec<f64>, (usize, usize, usize)) {
    let h_out = (h + 2 * ph - kh) / sh + 1;
    let w_out = (w + 2 * pw - kw) / sw + 1;
    let mut out = vec![0.0; h_out * w_out * c_out];
    for i in 0..h_out {
        for j in 0..w_out {
            for f in 0..c_out {
                let mut acc = b[f];
                for r in 0..kh {
                    for s in 0..kw {
                        let y = (i * sh + r) as isize - ph as isize;
                        let xx = (j * sw + s) as isize - pw as isize;
                        if y < 0 || xx < 0 || y as usize >= h || xx as usize >= w {
                            continue;
                        }
                        for ci in 0..c_in {
                            let xv = x[(y as usize * w + xx as usize) * c_in + ci];
                            let kv = k[((r * kw + s) * c_in + ci) * c_out + f];
                            acc += xv * kv;
                        }
                    }
                }
                out[(i * w_out + j) * c_out + f] = acc;
            }
        }
    }
    (out, (h_out, w_out, c_out))
}

/// Naive 64-bit max pooling over (h, w, c).
pub fn maxpool_oracle(
    x: &[f64],
    (h, w, c): (usize, usize, usize),
    (fh, fw): (usize, usize),
    (sh, sw): (usize, usize),
) -> (Vec<f64>, (usize, usize, usize)) {
    let h_out = (h - fh) / sh + 1;
    let w_out = (w - fw) / sw + 1;
    let mut out = vec![f64::NEG_INFINITY; h_out * w_out * c];
    for i in 0..h_out {
        for j in 0..w_out {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                for r in 0..fh {
                    for s in 0..fw {
                        let v = x[((i * sh + r) * w + (j * sw + s)) * c + ch];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(i * w_out + j) * c + ch] = best;
            }
        }
    }
    (out, (h_out, w_out, c))
}

/// Naive 64-bit dense layer: weights (n_in, n_out) row-major.
pub fn dense_oracle(x: &[f64], w: &[f64], (n_in, n_out): (usize, usize), b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    for i in 0..n_in {
        for j in 0..n_out {
            out[j] += x[i] * w[i * n_out + j];
        }
    }
    out
}

pub fn relu_oracle(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Mean softmax cross-entropy over a (b, k) logit batch, computed with the
/// max-subtraction trick entirely in f64.
pub fn softmax_ce_oracle(logits: &[f64], (bsz, k): (usize, usize), onehot: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..bsz {
        let row = &logits[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        for j in 0..k {
            if onehot[i * k + j] == 1.0 {
                total += log_sum - row[j];
            }
        }
    }
    total / bsz as f64
}

/// Central finite difference of a scalar function at `x`, one coordinate at
/// a time.
pub fn central_fd(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            p[i] += eps;
            let fp = f(&p);
            let mut m = x.to_vec();
            m[i] -= eps;
            let fm = f(&m);
            (fp - fm) / (2.0 * eps)
        })
        .collect()
}

/// Assert elementwise relative agreement between an analytic f32 gradient
/// and a 64-bit oracle, with a small absolute floor for near-zero entries.
pub fn assert_rel_close(analytic: &[f32], oracle: &[f64], tol: f64, what: &str) {
    assert_eq!(analytic.len(), oracle.len(), "{what}: length mismatch");
    for (i, (&a, &o)) in analytic.iter().zip(oracle).enumerate() {
        let denom = o.abs().max(1e-3);
        let rel = ((a as f64 - o) / denom).abs();
        assert!(
            rel <= tol,
            "{what}[{i}]: analytic {a} vs oracle {o} (rel {rel:.3e})"
        );
    }
}

pub fn save_gray_png(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize) -> u8) {
    let mut img = RgbImage::new(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let g = f(x, y);
            img.put(x, y, [g, g, g]);
        }
    }
    img.save_png(path).unwrap();
}

/// Two easily separable synthetic classes: horizontal ramps ("across") and
/// vertical ramps ("down"), with a deterministic per-image phase shift.
pub fn write_two_class_dataset(dir: &Path, per_class: usize, size: usize) {
    for (ci, class) in ["across", "down"].iter().enumerate() {
        let cd = dir.join(class);
        std::fs::create_dir_all(&cd).unwrap();
        for i in 0..per_class {
            save_gray_png(&cd.join(format!("img{i:03}.png")), size, size, |x, y| {
                let ramp = if ci == 0 {
                    x * 255 / (size - 1)
                } else {
                    y * 255 / (size - 1)
                };
                ((ramp + i * 7) % 256) as u8
            });
        }
    }
}

/// Miniature slim-style network for fast end-to-end tests: 16x16 inputs,
/// 8/16/16 filters with a 2x2 third kernel, a 32-unit hidden layer, and a
/// logits head — same layer vocabulary and names as the full model.
pub fn build_reduced_cnn(num_classes: usize) -> Model {
    ModelBuilder::input(&[16, 16, 1])
        .expect("valid input")
        .conv2d(8, (3, 3), true, None)
        .expect("conv1")
        .maxpool((2, 2), None)
        .expect("pool1")
        .conv2d(16, (3, 3), true, None)
        .expect("conv2")
        .conv2d(16, (2, 2), true, Some("lastConv"))
        .expect("conv3")
        .flatten(None)
        .expect("flatten")
        .dense(32, true, None)
        .expect("hidden")
        .dense(num_classes, false, Some("output_layer"))
        .expect("head")
        .build()
        .expect("reduced model builds")
}
