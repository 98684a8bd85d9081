//! Coarse-to-fine landmark inference with exact frame bookkeeping:
//! half → resized stage-1 frame (zero-padded) → stage-2 crop (zero-padded).

use crate::data::{resize_for_task, CropSource, FrameConfig, HalfSample, Task};
use crate::error::Result;
use crate::geometry::{crop_window, decode_heatmap, Heatmap, Point2D, SimilarityTransform2D};
use crate::raster::Raster;

pub trait HeatmapPredictor {
    /// One heatmap per input; inputs share a size.
    fn predict(&self, inputs: &[Raster]) -> Result<Vec<Heatmap>>;
}

pub struct Stage1Frame {
    /// Resized half before padding.
    pub image: Raster,
    /// Network input, zero-padded at the bottom and right.
    pub padded: Raster,
    /// Stage-1 frame (padded or not, they share origin) to half frame.
    pub to_half: SimilarityTransform2D,
}

pub fn stage1_frame(half: &HalfSample, frames: &FrameConfig) -> Result<Stage1Frame> {
    let (image, to_half) = resize_for_task(half, Task::LocalizationStage1, frames)?;
    let padded = image.pad_to(frames.stage1_padded, frames.stage1_padded)?;
    Ok(Stage1Frame { image, padded, to_half })
}

pub struct Stage2Frame {
    pub padded: Raster,
    /// Crop frame to half frame.
    pub to_half: SimilarityTransform2D,
}

/// Stage-2 window around `center`, given in half-frame coordinates.
pub fn stage2_frame(half: &HalfSample, s1: &Stage1Frame, center: Point2D, frames: &FrameConfig) -> Result<Stage2Frame> {
    let (crop, to_half) = match frames.crop_source {
        CropSource::Stage1 => {
            let c = s1.to_half.invert().apply(center);
            let (crop, t) = crop_window(&s1.image, c, frames.crop)?;
            (crop, t.then(&s1.to_half))
        }
        CropSource::Half => crop_window(&half.pixels, center, frames.crop)?,
    };
    let (pw, ph) = frames.crop_padded;
    Ok(Stage2Frame {
        padded: crop.pad_to(pw, ph)?,
        to_half,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoStageOutput {
    /// Stage-1 estimate in raw coordinates.
    pub coarse: Point2D,
    /// Final estimate in raw coordinates; equals `coarse` on fallback.
    pub refined: Point2D,
    pub coarse_peak: f32,
    /// True when stage 2 produced no response and the coarse point was kept.
    pub fell_back: bool,
}

fn clamp_to(p: Point2D, w: usize, h: usize) -> Point2D {
    Point2D::new(p.x.clamp(0.0, (w - 1) as f64), p.y.clamp(0.0, (h - 1) as f64))
}

/// Run both stages over a set of halves. The outer error reports model
/// failures; each half carries its own result so a no-response heatmap at
/// stage 1 fails only that half.
pub fn localize_two_stage(
    coarse: &dyn HeatmapPredictor,
    fine: &dyn HeatmapPredictor,
    halves: &[HalfSample],
    frames: &FrameConfig,
) -> Result<Vec<Result<TwoStageOutput>>> {
    frames.validate()?;
    let s1: Vec<Stage1Frame> = halves
        .iter()
        .map(|h| stage1_frame(h, frames))
        .collect::<Result<_>>()?;
    let inputs: Vec<Raster> = s1.iter().map(|f| f.padded.clone()).collect();
    let maps = coarse.predict(&inputs)?;
    let mut coarse_pts = Vec::with_capacity(halves.len());
    for ((half, frame), hm) in halves.iter().zip(&s1).zip(&maps) {
        coarse_pts.push(decode_heatmap(hm).map(|d| {
            let p = hm.to_input().apply(d.point);
            let p = clamp_to(p, frame.image.width(), frame.image.height());
            (frame.to_half.apply(p), d.peak, half)
        }));
    }
    let mut s2_idx = Vec::new();
    let mut s2 = Vec::new();
    for (i, c) in coarse_pts.iter().enumerate() {
        if let Ok((p, _, half)) = c {
            s2.push(stage2_frame(half, &s1[i], *p, frames)?);
            s2_idx.push(i);
        }
    }
    let fine_inputs: Vec<Raster> = s2.iter().map(|f| f.padded.clone()).collect();
    let fine_maps = if fine_inputs.is_empty() {
        Vec::new()
    } else {
        fine.predict(&fine_inputs)?
    };
    let mut refined: Vec<Option<Point2D>> = vec![None; halves.len()];
    for ((&i, frame), hm) in s2_idx.iter().zip(&s2).zip(&fine_maps) {
        if let Ok(d) = decode_heatmap(hm) {
            let p = clamp_to(hm.to_input().apply(d.point), frames.crop.0, frames.crop.1);
            refined[i] = Some(frame.to_half.apply(p));
        }
    }
    Ok(coarse_pts
        .into_iter()
        .zip(refined)
        .map(|(c, r)| {
            let (p_half, peak, half) = c?;
            let coarse = half.to_raw.apply(p_half);
            Ok(TwoStageOutput {
                coarse,
                refined: r.map(|p| half.to_raw.apply(p)).unwrap_or(coarse),
                coarse_peak: peak,
                fell_back: r.is_none(),
            })
        })
        .collect())
}
