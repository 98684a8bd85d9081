//! Batch sources for each training task.

use rand::Rng;
use rayon::prelude::*;

use super::{sample_rng, Batch, BatchSource};
use crate::data::{resize_for_task, split_half, AnnotationRecord, DatasetManifest, FrameConfig, HalfSample, RawImage, SplitOptions, Task};
use crate::error::{Error, Result};
use crate::geometry::{encode_heatmap, GaussianSpec, Point2D};
use crate::models::{stage1_frame, stage2_frame, Stage1Frame};
use crate::raster::Raster;

/// Load every image of a manifest and split it into halves, left then right.
pub fn load_halves(m: &DatasetManifest, opts: SplitOptions) -> Result<Vec<HalfSample>> {
    let pairs: Vec<(HalfSample, HalfSample)> = m
        .records
        .par_iter()
        .map(|rec| split_half(&m.load_image(rec)?, rec, opts))
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().flat_map(|(l, r)| [l, r]).collect())
}

pub fn halves_from_images(items: &[(RawImage, AnnotationRecord)], opts: SplitOptions) -> Result<Vec<HalfSample>> {
    let mut out = Vec::with_capacity(items.len() * 2);
    for (img, rec) in items {
        let (l, r) = split_half(img, rec, opts)?;
        out.push(l);
        out.push(r);
    }
    Ok(out)
}

fn random_shift(rng: &mut impl Rng, max: usize) -> (isize, isize) {
    if max == 0 {
        return (0, 0);
    }
    let m = max as i64;
    (rng.random_range(-m..=m) as isize, rng.random_range(-m..=m) as isize)
}

/// Resized halves with their closure labels.
pub struct ClsSource {
    inputs: Vec<Raster>,
    labels: Vec<f64>,
    shift: usize,
}

impl ClsSource {
    pub fn new(halves: &[HalfSample], frames: &FrameConfig, shift: usize) -> Result<Self> {
        let inputs = halves
            .par_iter()
            .map(|h| resize_for_task(h, Task::Classification, frames).map(|(r, _)| r))
            .collect::<Result<_>>()?;
        Ok(Self {
            inputs,
            labels: halves.iter().map(|h| h.label.as_f64()).collect(),
            shift,
        })
    }
}

impl BatchSource for ClsSource {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn batch(&self, indices: &[usize], epoch: usize, seed: u64) -> Result<Batch> {
        let shifted: Vec<Raster> = indices
            .iter()
            .map(|&i| {
                let (dx, dy) = random_shift(&mut sample_rng(seed, epoch, i), self.shift);
                self.inputs[i].shifted(dx, dy)
            })
            .collect();
        let refs: Vec<&Raster> = shifted.iter().collect();
        Ok(Batch {
            inputs: Raster::batch_tensor(&refs)?,
            targets: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

fn push_target(targets: &mut Vec<f64>, center: Point2D, input: (usize, usize), stride: usize, sigma: f64) -> Result<()> {
    let s = stride as f64;
    let hm = encode_heatmap(
        Point2D::new(center.x / s, center.y / s),
        (input.1 / stride, input.0 / stride),
        GaussianSpec::new(sigma)?,
    )?;
    targets.extend(hm.values().iter().map(|&v| f64::from(v)));
    Ok(())
}

/// Padded stage-1 frames with Gaussian targets at the annotated spur.
pub struct Stage1Source {
    inputs: Vec<Raster>,
    centers: Vec<Point2D>,
    frame_size: usize,
    stride: usize,
    sigma: f64,
    shift: usize,
}

impl Stage1Source {
    pub fn new(halves: &[HalfSample], frames: &FrameConfig, stride: usize, sigma: f64, shift: usize) -> Result<Self> {
        let built: Vec<(Raster, Point2D)> = halves
            .par_iter()
            .map(|h| {
                let f = stage1_frame(h, frames)?;
                Ok((f.padded, f.to_half.invert().apply(h.ss)))
            })
            .collect::<Result<_>>()?;
        let (inputs, centers) = built.into_iter().unzip();
        Ok(Self {
            inputs,
            centers,
            frame_size: frames.stage1_size,
            stride,
            sigma,
            shift,
        })
    }
}

impl BatchSource for Stage1Source {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn batch(&self, indices: &[usize], epoch: usize, seed: u64) -> Result<Batch> {
        let mut images = Vec::with_capacity(indices.len());
        let mut targets = Vec::new();
        for &i in indices {
            let (mut dx, mut dy) = random_shift(&mut sample_rng(seed, epoch, i), self.shift);
            let c = self.centers[i];
            let limit = (self.frame_size - 1) as f64;
            if !(0.0..=limit).contains(&(c.x + dx as f64)) || !(0.0..=limit).contains(&(c.y + dy as f64)) {
                (dx, dy) = (0, 0);
            }
            let img = &self.inputs[i];
            images.push(img.shifted(dx, dy));
            let center = Point2D::new(c.x + dx as f64, c.y + dy as f64);
            push_target(&mut targets, center, (img.width(), img.height()), self.stride, self.sigma)?;
        }
        let refs: Vec<&Raster> = images.iter().collect();
        Ok(Batch {
            inputs: Raster::batch_tensor(&refs)?,
            targets,
        })
    }
}

/// Stage-2 crops around an anchor (ground truth or a stage-1 estimate) with
/// a uniform random offset, targets in the crop frame.
pub struct Stage2Source {
    halves: Vec<HalfSample>,
    frames_s1: Vec<Stage1Frame>,
    /// Anchors in half coordinates.
    anchors: Vec<Point2D>,
    frames: FrameConfig,
    jitter: f64,
    stride: usize,
    sigma: f64,
}

impl Stage2Source {
    pub fn new(
        halves: &[HalfSample],
        anchors: Option<&[Point2D]>,
        frames: &FrameConfig,
        jitter: f64,
        stride: usize,
        sigma: f64,
    ) -> Result<Self> {
        frames.validate()?;
        if let Some(a) = anchors {
            if a.len() != halves.len() {
                return Err(Error::Invalid(format!("{} anchors for {} halves", a.len(), halves.len())));
            }
        }
        let frames_s1 = halves
            .par_iter()
            .map(|h| stage1_frame(h, frames))
            .collect::<Result<_>>()?;
        Ok(Self {
            halves: halves.to_vec(),
            frames_s1,
            anchors: anchors.map_or_else(|| halves.iter().map(|h| h.ss).collect(), <[Point2D]>::to_vec),
            frames: *frames,
            jitter,
            stride,
            sigma,
        })
    }

    /// Crop for sample `i` centered at `center` (half frame), with the target
    /// in crop coordinates, or `None` if the spur falls outside the crop.
    fn crop(&self, i: usize, center: Point2D) -> Result<Option<(Raster, Point2D)>> {
        let f = stage2_frame(&self.halves[i], &self.frames_s1[i], center, &self.frames)?;
        let t = f.to_half.invert().apply(self.halves[i].ss);
        let (cw, ch) = self.frames.crop;
        let inside = t.x >= 0.0 && t.y >= 0.0 && t.x <= (cw - 1) as f64 && t.y <= (ch - 1) as f64;
        Ok(inside.then_some((f.padded, t)))
    }
}

impl BatchSource for Stage2Source {
    fn len(&self) -> usize {
        self.halves.len()
    }

    fn batch(&self, indices: &[usize], epoch: usize, seed: u64) -> Result<Batch> {
        let mut images = Vec::with_capacity(indices.len());
        let mut targets = Vec::new();
        for &i in indices {
            let mut rng = sample_rng(seed, epoch, i);
            let s1 = &self.frames_s1[i];
            let a = s1.to_half.invert().apply(self.anchors[i]);
            let (jx, jy) = if self.jitter > 0.0 {
                (
                    rng.random_range(-self.jitter..=self.jitter),
                    rng.random_range(-self.jitter..=self.jitter),
                )
            } else {
                (0.0, 0.0)
            };
            let center = s1.to_half.apply(Point2D::new(a.x + jx, a.y + jy));
            // A distant anchor can leave the spur outside; fall back to the annotation.
            let (img, t) = match self.crop(i, center)? {
                Some(c) => c,
                None => self.crop(i, self.halves[i].ss)?.ok_or_else(|| {
                    Error::Geometry(format!("spur of {} does not fit its own crop", self.halves[i].image_id))
                })?,
            };
            push_target(&mut targets, t, (img.width(), img.height()), self.stride, self.sigma)?;
            images.push(img);
        }
        let refs: Vec<&Raster> = images.iter().collect();
        Ok(Batch {
            inputs: Raster::batch_tensor(&refs)?,
            targets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_dataset, SynthConfig};
    use crate::geometry::{decode_heatmap, Heatmap};

    fn desk_frames() -> FrameConfig {
        FrameConfig {
            cls_size: 64,
            stage1_size: 188,
            stage1_padded: 192,
            crop: (160, 120),
            crop_padded: (192, 192),
            ..FrameConfig::default()
        }
    }

    fn halves(n: usize) -> Vec<HalfSample> {
        let cfg = SynthConfig {
            count: n,
            ..SynthConfig::default()
        };
        halves_from_images(&synth_dataset(&cfg).unwrap(), SplitOptions::default()).unwrap()
    }

    fn decode_target(b: &Batch, k: usize, w: usize, h: usize) -> Point2D {
        let n = w * h;
        let vals = b.targets[k * n..(k + 1) * n].iter().map(|&v| v as f32).collect();
        decode_heatmap(&Heatmap::new(w, h, 1, vals).unwrap()).unwrap().point
    }

    #[test]
    fn stage1_targets_track_the_spur() {
        let hs = halves(3);
        let frames = desk_frames();
        let src = Stage1Source::new(&hs, &frames, 2, 1.0, 0).unwrap();
        let b = src.batch(&[0, 3, 5], 0, 1).unwrap();
        assert_eq!(b.inputs.shape(), &[3, 1, 192, 192]);
        for (k, &i) in [0usize, 3, 5].iter().enumerate() {
            let p = decode_target(&b, k, 96, 96);
            let f = stage1_frame(&hs[i], &frames).unwrap();
            let back = f.to_half.apply(Point2D::new(p.x * 2.0, p.y * 2.0));
            // 3x3 centroid decoding is off by under half a heatmap pixel per axis.
            let bound = (64.0f64 / 188.0).hypot(128.0 / 188.0);
            assert!(back.distance(&hs[i].ss) < bound, "{back:?} vs {:?}", hs[i].ss);
        }
    }

    #[test]
    fn stage2_targets_track_the_spur_under_jitter() {
        let hs = halves(3);
        let frames = desk_frames();
        let src = Stage2Source::new(&hs, None, &frames, 32.0, 2, 1.0).unwrap();
        for epoch in 0..3 {
            let b = src.batch(&[1, 2, 4], epoch, 9).unwrap();
            assert_eq!(b.inputs.shape(), &[3, 1, 192, 192]);
            for k in 0..3 {
                let p = decode_target(&b, k, 96, 96);
                assert!(p.x < 80.0 && p.y < 60.0);
            }
        }
        let again = src.batch(&[1, 2, 4], 2, 9).unwrap();
        assert_eq!(again.targets, src.batch(&[1, 2, 4], 2, 9).unwrap().targets);
    }

    #[test]
    fn cls_batches_are_deterministic() {
        let hs = halves(4);
        let src = ClsSource::new(&hs, &desk_frames(), 4).unwrap();
        let a = src.batch(&[0, 1, 7], 3, 5).unwrap();
        let b = src.batch(&[0, 1, 7], 3, 5).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.targets, vec![hs[0].label.as_f64(), hs[1].label.as_f64(), hs[7].label.as_f64()]);
        let c = src.batch(&[0, 1, 7], 4, 5).unwrap();
        assert_ne!(a.inputs, c.inputs);
    }
}
