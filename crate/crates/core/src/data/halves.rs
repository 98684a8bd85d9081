use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SimilarityTransform2D;
use crate::raster::Raster;

use super::{AnnotationRecord, HalfSample, RawImage, Side};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Flip right halves so both sides share the left-side orientation.
    pub mirror_right: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self { mirror_right: true }
    }
}

/// Pixel sizes of every network-facing frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    /// Square classifier input.
    pub cls_size: usize,
    /// Square stage-1 localization frame the half is resized to.
    pub stage1_size: usize,
    /// Stage-1 frame zero-padded (top-left anchored) to this square size.
    pub stage1_padded: usize,
    /// Stage-2 crop taken from the stage-1 frame, `(width, height)`.
    pub crop: (usize, usize),
    /// Stage-2 crop zero-padded to this `(width, height)`.
    pub crop_padded: (usize, usize),
    pub crop_source: CropSource,
}

/// Frame the stage-2 window is cut from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CropSource {
    /// The resized stage-1 network input.
    Stage1,
    /// The half at its original resolution.
    Half,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            cls_size: 256,
            stage1_size: 499,
            stage1_padded: 512,
            crop: (384, 288),
            crop_padded: (384, 320),
            crop_source: CropSource::Stage1,
        }
    }
}

impl FrameConfig {
    /// Frames for 128x128 synthetic scans (64-wide halves).
    pub fn desk() -> Self {
        Self {
            cls_size: 64,
            stage1_size: 188,
            stage1_padded: 192,
            crop: (160, 120),
            crop_padded: (192, 192),
            crop_source: CropSource::Stage1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let div32 = |v: usize| v > 0 && v % 32 == 0;
        if !div32(self.cls_size) {
            return Err(Error::Config(format!("cls_size {} must be a positive multiple of 32", self.cls_size)));
        }
        if !div32(self.stage1_padded) || self.stage1_size == 0 || self.stage1_size > self.stage1_padded {
            return Err(Error::Config(format!(
                "stage1 frame {} must fit in a padded size {} divisible by 32",
                self.stage1_size, self.stage1_padded
            )));
        }
        let (cw, ch) = self.crop;
        let (pw, ph) = self.crop_padded;
        let inside = self.crop_source == CropSource::Half || (cw <= self.stage1_size && ch <= self.stage1_size);
        if cw == 0 || ch == 0 || !inside {
            return Err(Error::Config(format!(
                "crop {cw}x{ch} must fit inside the {0}x{0} stage-1 frame",
                self.stage1_size
            )));
        }
        if !div32(pw) || !div32(ph) || pw < cw || ph < ch {
            return Err(Error::Config(format!(
                "crop padding {pw}x{ph} must cover {cw}x{ch} and be divisible by 32"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Classification,
    LocalizationStage1,
}

/// Split a raw scan into its left and right halves.
///
/// Odd widths drop the rightmost column first. The left half is columns
/// `[0, W/2)` with an identity `to_raw`; the right half is columns `[W/2, W)`,
/// mirrored when `opts.mirror_right` is set.
pub fn split_half(img: &RawImage, rec: &AnnotationRecord, opts: SplitOptions) -> Result<(HalfSample, HalfSample)> {
    if img.id != rec.image_id {
        return Err(Error::Invalid(format!(
            "annotation `{}` does not match image `{}`",
            rec.image_id, img.id
        )));
    }
    let (w_raw, h) = (img.pixels.width(), img.pixels.height());
    if w_raw < 2 || h < 2 {
        return Err(Error::Geometry(format!("image {w_raw}x{h} too small to split")));
    }
    let w = w_raw - w_raw % 2;
    let half_w = w / 2;
    let mid = half_w as f64;
    if !(rec.ss_left.x < mid && rec.ss_right.x >= mid && rec.ss_right.x <= (w - 1) as f64) {
        return Err(Error::Bounds(format!(
            "image `{}`: annotations inconsistent with halves split at x={mid}",
            rec.image_id
        )));
    }
    let left_pixels = img.pixels.crop(0, 0, half_w, h)?;
    let right_raw = img.pixels.crop(half_w, 0, half_w, h)?;
    let (right_pixels, right_to_raw) = if opts.mirror_right {
        (right_raw.mirror_x(), SimilarityTransform2D::mirror(w))
    } else {
        (right_raw, SimilarityTransform2D::translate(mid, 0.0))
    };
    let left = HalfSample {
        image_id: rec.image_id.clone(),
        side: Side::Left,
        pixels: left_pixels,
        label: rec.label,
        ss: rec.ss_left,
        to_raw: SimilarityTransform2D::identity(),
    };
    let right = HalfSample {
        image_id: rec.image_id.clone(),
        side: Side::Right,
        pixels: right_pixels,
        label: rec.label,
        ss: right_to_raw.invert().apply(rec.ss_right),
        to_raw: right_to_raw,
    };
    Ok((left, right))
}

/// Reassemble a raw image from its two halves, undoing the right-side flip.
pub fn reconstruct(left: &HalfSample, right: &HalfSample) -> Result<RawImage> {
    let right_pixels = if right.to_raw.mirror_x {
        right.pixels.mirror_x()
    } else {
        right.pixels.clone()
    };
    Ok(RawImage {
        id: left.image_id.clone(),
        pixels: left.pixels.hconcat(&right_pixels)?,
    })
}

/// Resize a half for a task; the transform maps resized-frame points back to
/// half-frame points.
pub fn resize_for_task(h: &HalfSample, task: Task, frames: &FrameConfig) -> Result<(Raster, SimilarityTransform2D)> {
    let size = match task {
        Task::Classification => frames.cls_size,
        Task::LocalizationStage1 => frames.stage1_size,
    };
    h.pixels.resize_bilinear(size, size)
}
