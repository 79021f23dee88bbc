//! Gradient-weighted class activation maps and their visualization: the
//! heatmap computed from last-conv gradients, the piecewise-linear jet
//! colormap, heatmap/image superimposition, and the multi-case grid
//! renderer used by `explain`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{load_grayscale_image, DatasetIndex};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::render::{gray_dims, gray_to_rgb, quantize255, resize_plane, RgbImage};
use crate::tensor::Tensor;

/// Class activation heatmap for the class the model predicts on `image`.
///
/// The forward pass captures the named layer's post-activation map `A`
/// (H', W', C); the top logit is backpropagated to `A`; each channel's
/// weight is the spatial mean of its gradient; the weighted channel sum is
/// clamped at zero and divided by its maximum (all zeros when the maximum
/// is not positive). Returns an (H', W') tensor with values in [0, 1].
pub fn gradcam_heatmap(model: &Model, image: &Tensor, last_conv: &str) -> Result<Tensor> {
    let trace = model.forward_trace(image)?;
    let class = crate::model::argmax(trace.logits().data());
    heatmap_from_trace(model, &trace, class, last_conv)
}

/// Same as [`gradcam_heatmap`] but for an explicitly chosen class.
pub fn gradcam_heatmap_for_class(
    model: &Model,
    image: &Tensor,
    class_index: usize,
    last_conv: &str,
) -> Result<Tensor> {
    let trace = model.forward_trace(image)?;
    heatmap_from_trace(model, &trace, class_index, last_conv)
}

fn heatmap_from_trace(
    model: &Model,
    trace: &crate::model::Trace,
    class_index: usize,
    last_conv: &str,
) -> Result<Tensor> {
    let idx = model.layer_index(last_conv)?;
    let activation = &trace.activations[idx];
    let [h, w, c] = match activation.dims() {
        [h, w, c] => [*h, *w, *c],
        _ => {
            return Err(Error::InvalidArgument(format!(
                "layer \"{last_conv}\" produces a {} activation; a (h, w, c) map is required",
                activation.shape()
            )))
        }
    };
    let grad = model.activation_gradient(trace, class_index, last_conv)?;

    // Channel weights: spatial mean of the gradient, accumulated in f64.
    let g = grad.data();
    let mut alpha = vec![0.0f64; c];
    for px in g.chunks_exact(c) {
        for (a, &v) in alpha.iter_mut().zip(px) {
            *a += v as f64;
        }
    }
    let inv_area = 1.0 / (h * w) as f64;
    for a in &mut alpha {
        *a *= inv_area;
    }

    // Weighted channel sum, negatives clamped, then max-normalized.
    let a = activation.data();
    let mut raw = vec![0.0f64; h * w];
    for (out, px) in raw.iter_mut().zip(a.chunks_exact(c)) {
        let mut s = 0.0f64;
        for (w_c, &v) in alpha.iter().zip(px) {
            s += w_c * v as f64;
        }
        *out = s.max(0.0);
    }
    let max = raw.iter().cloned().fold(0.0f64, f64::max);
    let mut out = Tensor::zeros(&[h, w])?;
    if max > 0.0 {
        for (dst, v) in out.data_mut().iter_mut().zip(&raw) {
            *dst = (v / max) as f32;
        }
    }
    Ok(out)
}

fn clamp01(x: f32) -> f32 {
    x.clamp(0.0, 1.0)
}

fn round_u8(x: f32) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Piecewise-linear jet colormap. The input is clamped to [0, 1]; each
/// channel is a clamped min of two line segments, scaled to 8 bits with
/// half-up rounding. Anchors: 0 → (0,0,128), 0.5 → (128,255,128),
/// 1 → (128,0,0).
pub fn jet(value: f32) -> [u8; 3] {
    let x = clamp01(value);
    let r = clamp01((4.0 * x - 1.5).min(-4.0 * x + 4.5));
    let g = clamp01((4.0 * x - 0.5).min(-4.0 * x + 3.5));
    let b = clamp01((4.0 * x + 0.5).min(-4.0 * x + 2.5));
    [
        round_u8(r * 255.0),
        round_u8(g * 255.0),
        round_u8(b * 255.0),
    ]
}

/// Jet color for a heatmap value after rescaling to the 256-level 8-bit
/// range, mirroring a 256-entry lookup table.
fn jet_level(v: f32) -> [u8; 3] {
    jet(quantize255(v) as f32 / 255.0)
}

/// Corner-aligned bilinear resize of a single-channel map ((h, w) or
/// (h, w, 1)) to (out_h, out_w). Corners map exactly onto corners, so
/// constant maps stay constant.
pub fn resize_bilinear(hm: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = gray_dims(hm)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(
            "resize target dimensions must be at least 1x1".into(),
        ));
    }
    let data = resize_plane(hm.data(), (h, w), (out_h, out_w));
    Tensor::new(&[out_h, out_w], data)
}

/// Render a heatmap as a jet-colorized image.
pub fn jet_colorize(hm: &Tensor) -> Result<RgbImage> {
    let (h, w) = gray_dims(hm)?;
    let mut img = RgbImage::new(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            img.put(x, y, jet_level(hm.data()[y * w + x]));
        }
    }
    Ok(img)
}

/// Blend a jet-colorized heatmap over a grayscale image:
/// out = round(jet · alpha + gray8) per channel, clamped to [0, 255].
/// The heatmap must already be at the image's resolution.
pub fn superimpose(hm: &Tensor, image: &Tensor, alpha: f32) -> Result<RgbImage> {
    let (h, w) = gray_dims(image)?;
    let (hh, hw) = gray_dims(hm)?;
    if (hh, hw) != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: format!("({h}, {w})"),
            got: format!("({hh}, {hw})"),
        });
    }
    if alpha < 0.0 {
        return Err(Error::InvalidArgument(
            "blend alpha must be non-negative".into(),
        ));
    }
    let mut out = RgbImage::new(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let jet_px = jet_level(hm.data()[i]);
            let gray = quantize255(image.data()[i]) as f32;
            let px = [
                round_u8(jet_px[0] as f32 * alpha + gray),
                round_u8(jet_px[1] as f32 * alpha + gray),
                round_u8(jet_px[2] as f32 * alpha + gray),
            ];
            out.put(x, y, px);
        }
    }
    Ok(out)
}

/// Where `explain` cases come from.
#[derive(Clone, Debug)]
pub enum CaseSource {
    /// Explicit image paths; true labels are unknown.
    Paths(Vec<PathBuf>),
    /// Draw `m` images (seeded, without replacement) from a
    /// class-per-folder dataset directory.
    Sample { dir: PathBuf, m: usize, seed: u64 },
}

/// One explained case.
pub struct Case {
    pub stem: String,
    pub predicted: usize,
    pub truth: Option<usize>,
    pub superimposed: RgbImage,
}

/// Everything `explain` produces: the m x 4 grid plus per-case outputs.
pub struct Explanations {
    pub grid: RgbImage,
    pub cases: Vec<Case>,
    pub class_names: Vec<String>,
}

pub(crate) const GRID_PAD: usize = 6;
pub(crate) const GRID_CAPTION_H: usize = 20;

const INK: [u8; 3] = [0, 0, 0];
const PAGE_BG: [u8; 3] = [255, 255, 255];

/// Render the explanation grid: one row per case with four panels —
/// original image, grey heatmap, jet heatmap, and the superimposed image
/// captioned with predicted (and true, when known) class. Case sampling is
/// deterministic in the seed; explicit case lists set the row count.
pub fn render_cases(
    model: &Model,
    source: &CaseSource,
    last_conv: &str,
    alpha: f32,
    class_names: Option<&[String]>,
) -> Result<Explanations> {
    let dims = model.input_shape().dims().to_vec();
    let (in_h, in_w) = (dims[0], dims[1]);
    let k = model.num_classes();

    // (stem, truth, image) triples in final row order.
    let mut names: Vec<String> = match class_names {
        Some(names) => {
            if names.len() != k {
                return Err(Error::LengthMismatch {
                    expected: k,
                    got: names.len(),
                });
            }
            names.to_vec()
        }
        None => (0..k).map(|c| c.to_string()).collect(),
    };
    let mut loaded: Vec<(String, Option<usize>, Tensor)> = Vec::new();
    match source {
        CaseSource::Paths(paths) => {
            if paths.is_empty() {
                return Err(Error::InvalidArgument("no case images supplied".into()));
            }
            for path in paths {
                let image = load_grayscale_image(path, in_h, in_w)?;
                loaded.push((stem_of(path), None, image));
            }
        }
        CaseSource::Sample { dir, m, seed } => {
            if *m == 0 {
                return Err(Error::InvalidArgument(
                    "case count m must be at least 1".into(),
                ));
            }
            let ds = DatasetIndex::from_dir(dir)?;
            if class_names.is_none() {
                if ds.classes.len() != k {
                    return Err(Error::LengthMismatch {
                        expected: k,
                        got: ds.classes.len(),
                    });
                }
                names = ds.classes.clone();
            }
            let take = (*m).min(ds.samples.len());
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let picks = rand::seq::index::sample(&mut rng, ds.samples.len(), take);
            for i in picks.iter() {
                let (path, label) = &ds.samples[i];
                let image = load_grayscale_image(path, in_h, in_w)?;
                loaded.push((stem_of(path), Some(*label), image));
            }
        }
    }

    // Duplicate stems get a numeric suffix so per-case files never collide.
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (stem, _, _) in &mut loaded {
        let n = seen.entry(stem.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            *stem = format!("{stem}_{n}");
        }
    }

    let m = loaded.len();
    let cell_w = in_w + 2 * GRID_PAD;
    let cell_h = GRID_CAPTION_H + in_h + GRID_PAD;
    let mut grid = RgbImage::new(4 * cell_w, m * cell_h, PAGE_BG);
    let mut cases = Vec::with_capacity(m);

    for (row, (stem, truth, image)) in loaded.into_iter().enumerate() {
        let trace = model.forward_trace(&image)?;
        let predicted = crate::model::argmax(trace.logits().data());
        let heatmap = heatmap_from_trace(model, &trace, predicted, last_conv)?;
        let full = resize_bilinear(&heatmap, in_h, in_w)?;

        let panels = [
            gray_to_rgb(&image)?,
            gray_to_rgb(&full)?,
            jet_colorize(&full)?,
            superimpose(&full, &image, alpha)?,
        ];
        let pred_name = names[predicted].as_str();
        let true_name = truth.map_or("?", |t| names[t].as_str());
        let captions = [
            ("ORIGINAL".to_string(), String::new()),
            ("GREY HEATMAP".to_string(), String::new()),
            ("JET HEATMAP".to_string(), String::new()),
            (format!("PRED: {pred_name}"), format!("TRUE: {true_name}")),
        ];
        for (col, (panel, (line1, line2))) in panels.iter().zip(&captions).enumerate() {
            let x0 = col * cell_w + GRID_PAD;
            let y0 = row * cell_h;
            grid.draw_text(x0, y0 + 1, line1, INK, 1);
            if !line2.is_empty() {
                grid.draw_text(x0, y0 + 10, line2, INK, 1);
            }
            grid.blit(panel, x0, y0 + GRID_CAPTION_H);
        }
        let [_, _, _, superimposed] = panels;
        cases.push(Case {
            stem,
            predicted,
            truth,
            superimposed,
        });
    }

    Ok(Explanations {
        grid,
        cases,
        class_names: names,
    })
}

impl Explanations {
    /// Write per-case `<stem>_gradcam.png` files and the `cases_grid.png`
    /// sheet into `dir`; returns the written paths in order.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut written = Vec::with_capacity(self.cases.len() + 1);
        for case in &self.cases {
            let path = dir.join(format!("{}_gradcam.png", case.stem));
            case.superimposed.save_png(&path)?;
            written.push(path);
        }
        let grid_path = dir.join("cases_grid.png");
        self.grid.save_png(&grid_path)?;
        written.push(grid_path);
        Ok(written)
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".to_string())
}
