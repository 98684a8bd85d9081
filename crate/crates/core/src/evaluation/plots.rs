//! Minimal raster plots: an ROC curve and an error histogram.

use std::path::Path;

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_rect_mut, draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

use crate::error::{Error, Result};

const SIZE: u32 = 320;
const MARGIN: u32 = 30;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GREY: Rgb<u8> = Rgb([180, 180, 180]);
const BLUE: Rgb<u8> = Rgb([30, 90, 200]);

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, WHITE);
    let side = SIZE - 2 * MARGIN;
    draw_hollow_rect_mut(&mut img, Rect::at(MARGIN as i32, MARGIN as i32).of_size(side + 1, side + 1), BLACK);
    img
}

/// Map unit-square coordinates (origin bottom-left) to pixels.
fn to_px(x: f64, y: f64) -> (f32, f32) {
    let side = (SIZE - 2 * MARGIN) as f64;
    (
        (MARGIN as f64 + x.clamp(0.0, 1.0) * side) as f32,
        (MARGIN as f64 + (1.0 - y.clamp(0.0, 1.0)) * side) as f32,
    )
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// ROC curve from `(fpr, tpr)` points with the chance diagonal.
pub fn roc_plot(points: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut img = canvas();
    draw_line_segment_mut(&mut img, to_px(0.0, 0.0), to_px(1.0, 1.0), GREY);
    for w in points.windows(2) {
        draw_line_segment_mut(&mut img, to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), BLUE);
    }
    save(&img, path)
}

/// Histogram of localization errors with `bins` equal-width bins from 0 to
/// the largest error.
pub fn ed_histogram(errors: &[f64], bins: usize, path: &Path) -> Result<()> {
    let mut img = canvas();
    let bins = bins.max(1);
    let max = errors.iter().copied().filter(|e| e.is_finite()).fold(0.0f64, f64::max);
    let mut counts = vec![0usize; bins];
    for &e in errors.iter().filter(|e| e.is_finite()) {
        let b = if max > 0.0 { ((e / max) * bins as f64) as usize } else { 0 };
        counts[b.min(bins - 1)] += 1;
    }
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let (x0, y0) = to_px(i as f64 / bins as f64, c as f64 / peak);
        let (x1, y1) = to_px((i + 1) as f64 / bins as f64, 0.0);
        let w = ((x1 - x0) as u32).saturating_sub(1).max(1);
        let h = ((y1 - y0) as u32).max(1);
        draw_filled_rect_mut(&mut img, Rect::at(x0 as i32 + 1, y0 as i32).of_size(w, h), BLUE);
    }
    save(&img, path)
}
