//! Raster output utilities: an 8-bit RGB canvas, grayscale-to-RGB
//! conversion, corner-aligned bilinear plane resizing, an embedded 5x7
//! bitmap font for captions (no external font dependency), and PNG
//! encoding.

use std::fs;
use std::path::Path;

use image::ImageEncoder;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interleaved 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    /// Solid-color canvas.
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> RgbImage {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let off = (y * self.width + x) * 3;
        [self.data[off], self.data[off + 1], self.data[off + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        if x < self.width && y < self.height {
            let off = (y * self.width + x) * 3;
            self.data[off..off + 3].copy_from_slice(&rgb);
        }
    }

    /// Copy `src` with its top-left corner at (x0, y0), clipped to bounds.
    pub fn blit(&mut self, src: &RgbImage, x0: usize, y0: usize) {
        for sy in 0..src.height {
            let y = y0 + sy;
            if y >= self.height {
                break;
            }
            let copy_w = src.width.min(self.width.saturating_sub(x0));
            if copy_w == 0 {
                break;
            }
            let dst_off = (y * self.width + x0) * 3;
            let src_off = sy * src.width * 3;
            self.data[dst_off..dst_off + copy_w * 3]
                .copy_from_slice(&src.data[src_off..src_off + copy_w * 3]);
        }
    }

    /// Draw uppercase 5x7 bitmap text; `scale` is an integer pixel zoom.
    /// Characters without a glyph render as blanks.
    pub fn draw_text(&mut self, x0: usize, y0: usize, text: &str, color: [u8; 3], scale: usize) {
        let scale = scale.max(1);
        let mut pen_x = x0;
        for ch in text.chars() {
            let glyph = glyph_for(ch.to_ascii_uppercase());
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..5 {
                    if bits & (0x10 >> col) != 0 {
                        for dy in 0..scale {
                            for dx in 0..scale {
                                self.put(
                                    pen_x + col * scale + dx,
                                    y0 + row * scale + dy,
                                    color,
                                );
                            }
                        }
                    }
                }
            }
            pen_x += 6 * scale;
        }
    }

    /// Encode as PNG bytes.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(
                &self.data,
                self.width as u32,
                self.height as u32,
                image::ColorType::Rgb8,
            )
            .map_err(Error::ImageEncode)?;
        Ok(out)
    }

    /// Encode as PNG and write to `path`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Convert a single-channel tensor — rank 2 (h, w) or rank 3 (h, w, 1) —
/// holding values in [0,1] into replicated-RGB 8-bit, pixel = round(v*255).
pub fn gray_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let (h, w) = gray_dims(t)?;
    let mut img = RgbImage::new(w, h, [0, 0, 0]);
    for (i, &v) in t.data().iter().enumerate() {
        let p = quantize255(v);
        img.data[i * 3..i * 3 + 3].copy_from_slice(&[p, p, p]);
    }
    Ok(img)
}

/// Round a [0,1] value to its 0–255 8-bit level (clamped).
pub(crate) fn quantize255(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0).round() as u8
}

/// Height/width of a single-channel tensor (rank 2, or rank 3 with c=1).
pub(crate) fn gray_dims(t: &Tensor) -> Result<(usize, usize)> {
    match t.dims() {
        [h, w] => Ok((*h, *w)),
        [h, w, 1] => Ok((*h, *w)),
        _ => Err(Error::InvalidShape(format!(
            "expected a single-channel (h, w) or (h, w, 1) tensor, got {}",
            t.shape()
        ))),
    }
}

/// Corner-aligned bilinear resample of an (h, w) plane: output corners map
/// exactly onto input corners, so constants stay constant and corner values
/// are preserved.
pub(crate) fn resize_plane(
    src: &[f32],
    (h, w): (usize, usize),
    (out_h, out_w): (usize, usize),
) -> Vec<f32> {
    debug_assert_eq!(src.len(), h * w);
    let step_y = if out_h > 1 {
        (h - 1) as f64 / (out_h - 1) as f64
    } else {
        0.0
    };
    let step_x = if out_w > 1 {
        (w - 1) as f64 / (out_w - 1) as f64
    } else {
        0.0
    };
    let mut out = vec![0.0f32; out_h * out_w];
    for i in 0..out_h {
        let fy = i as f64 * step_y;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let dy = fy - y0 as f64;
        for j in 0..out_w {
            let fx = j as f64 * step_x;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let dx = fx - x0 as f64;
            let v00 = src[y0 * w + x0] as f64;
            let v01 = src[y0 * w + x1] as f64;
            let v10 = src[y1 * w + x0] as f64;
            let v11 = src[y1 * w + x1] as f64;
            out[i * out_w + j] = (v00 * (1.0 - dy) * (1.0 - dx)
                + v01 * (1.0 - dy) * dx
                + v10 * dy * (1.0 - dx)
                + v11 * dy * dx) as f32;
        }
    }
    out
}

/// 5x7 glyph rows; bit 4 (0x10) is the leftmost column.
fn glyph_for(ch: char) -> [u8; 7] {
    match ch {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0E],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '?' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        _ => [0x00; 7],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_round_trip() {
        let mut img = RgbImage::new(4, 3, [0, 0, 0]);
        img.put(2, 1, [10, 20, 30]);
        assert_eq!(img.get(2, 1), [10, 20, 30]);
        assert_eq!(img.get(0, 0), [0, 0, 0]);
    }

    #[test]
    fn out_of_bounds_put_is_ignored() {
        let mut img = RgbImage::new(2, 2, [1, 1, 1]);
        img.put(5, 5, [9, 9, 9]);
        assert!(img.data().iter().all(|&v| v == 1));
    }

    #[test]
    fn blit_copies_and_clips() {
        let mut canvas = RgbImage::new(4, 4, [0, 0, 0]);
        let tile = RgbImage::new(3, 3, [7, 8, 9]);
        canvas.blit(&tile, 2, 2);
        assert_eq!(canvas.get(2, 2), [7, 8, 9]);
        assert_eq!(canvas.get(3, 3), [7, 8, 9]);
        assert_eq!(canvas.get(1, 1), [0, 0, 0]);
    }

    #[test]
    fn gray_conversion_quantizes_by_rounding() {
        let t = Tensor::new(&[1, 4, 1], vec![0.0, 1.0, 100.0 / 255.0, 0.5]).unwrap();
        let img = gray_to_rgb(&t).unwrap();
        assert_eq!(img.get(0, 0), [0, 0, 0]);
        assert_eq!(img.get(1, 0), [255, 255, 255]);
        assert_eq!(img.get(2, 0), [100, 100, 100]);
        assert_eq!(img.get(3, 0), [128, 128, 128]); // 127.5 rounds up
    }

    #[test]
    fn gray_conversion_clamps_out_of_range() {
        let t = Tensor::new(&[1, 2], vec![-0.5, 1.5]).unwrap();
        let img = gray_to_rgb(&t).unwrap();
        assert_eq!(img.get(0, 0), [0, 0, 0]);
        assert_eq!(img.get(1, 0), [255, 255, 255]);
    }

    #[test]
    fn resize_constant_plane_stays_constant() {
        let got = resize_plane(&[0.7; 4], (2, 2), (5, 3));
        assert!(got.iter().all(|v| (v - 0.7).abs() < 1e-6));
        let one = resize_plane(&[0.3], (1, 1), (4, 4));
        assert!(one.iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn resize_checkerboard_interpolates_the_center() {
        let got = resize_plane(&[0.0, 1.0, 1.0, 0.0], (2, 2), (3, 3));
        // Corners preserved, edges at 0.5 are midpoints, center is 0.5.
        let want = [0.0, 0.5, 1.0, 0.5, 0.5, 0.5, 1.0, 0.5, 0.0];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6, "got {g}, want {w}");
        }
    }

    #[test]
    fn draw_text_sets_expected_pixels() {
        let mut img = RgbImage::new(8, 8, [0, 0, 0]);
        img.draw_text(0, 0, "I", [255, 0, 0], 1);
        // Top row of 'I' is .###. -> columns 1..=3 set.
        assert_eq!(img.get(1, 0), [255, 0, 0]);
        assert_eq!(img.get(2, 0), [255, 0, 0]);
        assert_eq!(img.get(3, 0), [255, 0, 0]);
        assert_eq!(img.get(0, 0), [0, 0, 0]);
        assert_eq!(img.get(4, 0), [0, 0, 0]);
        // Stem at column 2.
        assert_eq!(img.get(2, 3), [255, 0, 0]);
    }

    #[test]
    fn draw_text_lowercase_maps_to_uppercase() {
        let mut upper = RgbImage::new(8, 8, [0, 0, 0]);
        let mut lower = RgbImage::new(8, 8, [0, 0, 0]);
        upper.draw_text(0, 0, "A", [255, 255, 255], 1);
        lower.draw_text(0, 0, "a", [255, 255, 255], 1);
        assert_eq!(upper.data(), lower.data());
    }

    #[test]
    fn png_round_trip_preserves_pixels() {
        let mut img = RgbImage::new(3, 2, [0, 0, 0]);
        img.put(0, 0, [255, 0, 0]);
        img.put(1, 0, [0, 255, 0]);
        img.put(2, 1, [0, 0, 255]);
        let bytes = img.to_png_bytes().unwrap();
        let decoded = image::load_from_memory(&bytes).unwrap().to_rgb8();
        assert_eq!(decoded.width(), 3);
        assert_eq!(decoded.height(), 2);
        assert_eq!(decoded.get_pixel(0, 0).0, [255, 0, 0]);
        assert_eq!(decoded.get_pixel(1, 0).0, [0, 255, 0]);
        assert_eq!(decoded.get_pixel(2, 1).0, [0, 0, 255]);
    }

    #[test]
    fn png_encoding_is_deterministic() {
        let mut img = RgbImage::new(16, 16, [3, 5, 7]);
        img.draw_text(1, 1, "PRED: 2", [255, 255, 255], 1);
        let a = img.to_png_bytes().unwrap();
        let b = img.to_png_bytes().unwrap();
        assert_eq!(a, b);
    }
}
