use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sources::{Stage1Source, Stage2Source};
use super::{BatchSource, Checkpoint, EpochRecord, ModelKind, Objective, OptimConfig, Selection, TaskKind, TrainConfig, Trainer};
use crate::data::{FrameConfig, HalfSample};
use crate::error::{Error, Result};
use crate::geometry::{decode_heatmap, Point2D};
use crate::losses::{HeatmapLoss, KRParams};
use crate::models::{stage1_frame, stage2_frame, HeatmapPredictor, Localizer, LocalizerConfig, Stage1Frame};
use crate::raster::Raster;

/// Everything that defines a localization run; echoed into checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizerRun {
    pub model: LocalizerConfig,
    pub train: TrainConfig,
    pub optim: OptimConfig,
    pub loss: HeatmapLoss,
    pub frames: FrameConfig,
}

impl LocalizerRun {
    pub fn for_stage(task: TaskKind) -> Self {
        Self {
            model: LocalizerConfig::default(),
            train: TrainConfig::for_task(task),
            optim: OptimConfig::default(),
            loss: HeatmapLoss::Kr(KRParams::default()),
            frames: FrameConfig::default(),
        }
    }

    /// Network input width implied by the frames for this stage.
    pub fn expected_input(&self) -> Result<usize> {
        match self.train.task {
            TaskKind::LocalizationStage1 => Ok(self.frames.stage1_padded),
            TaskKind::LocalizationStage2 => Ok(self.frames.crop_padded.0),
            TaskKind::Classification => Err(Error::Config("a localizer run needs a localization task".into())),
        }
    }
}

/// Clamp into a `w × h` frame.
fn clamp_to(p: Point2D, w: usize, h: usize) -> Point2D {
    Point2D::new(p.x.clamp(0.0, (w - 1) as f64), p.y.clamp(0.0, (h - 1) as f64))
}

/// Stage-1 estimates in half coordinates.
pub fn stage1_points(net: &dyn HeatmapPredictor, halves: &[HalfSample], frames: &FrameConfig) -> Result<Vec<Result<Point2D>>> {
    let s1: Vec<Stage1Frame> = halves.iter().map(|h| stage1_frame(h, frames)).collect::<Result<_>>()?;
    let inputs: Vec<Raster> = s1.iter().map(|f| f.padded.clone()).collect();
    let maps = net.predict(&inputs)?;
    Ok(s1
        .iter()
        .zip(&maps)
        .map(|(f, hm)| {
            let d = decode_heatmap(hm)?;
            let p = clamp_to(hm.to_input().apply(d.point), f.image.width(), f.image.height());
            Ok(f.to_half.apply(p))
        })
        .collect())
}

/// Stage-2 estimates in half coordinates for crops centered on `anchors`
/// (half coordinates).
pub fn stage2_points(
    net: &dyn HeatmapPredictor,
    halves: &[HalfSample],
    anchors: &[Point2D],
    frames: &FrameConfig,
) -> Result<Vec<Result<Point2D>>> {
    if anchors.len() != halves.len() {
        return Err(Error::Invalid(format!("{} anchors for {} halves", anchors.len(), halves.len())));
    }
    let s2 = halves
        .iter()
        .zip(anchors)
        .map(|(h, &a)| stage2_frame(h, &stage1_frame(h, frames)?, a, frames))
        .collect::<Result<Vec<_>>>()?;
    let inputs: Vec<Raster> = s2.iter().map(|f| f.padded.clone()).collect();
    let maps = net.predict(&inputs)?;
    Ok(s2
        .iter()
        .zip(&maps)
        .map(|(f, hm)| {
            let d = decode_heatmap(hm)?;
            let p = clamp_to(hm.to_input().apply(d.point), frames.crop.0, frames.crop.1);
            Ok(f.to_half.apply(p))
        })
        .collect())
}

/// Mean raw-pixel error; a half without a response counts as the half's
/// diagonal.
pub fn mean_point_error(points: &[Result<Point2D>], halves: &[HalfSample]) -> f64 {
    let total: f64 = points
        .iter()
        .zip(halves)
        .map(|(p, h)| match p {
            Ok(p) => h.to_raw.apply(*p).distance(&h.to_raw.apply(h.ss)),
            Err(_) => (h.pixels.width() as f64).hypot(h.pixels.height() as f64),
        })
        .sum();
    total / halves.len() as f64
}

/// Train one localization stage. Stage-2 crops are anchored on the
/// annotations unless `anchors` supplies stage-1 estimates (half coordinates)
/// for the train and validation halves. Selects the epoch with the lowest
/// mean validation error.
pub fn train_localizer(
    run: &LocalizerRun,
    train: &[HalfSample],
    val: &[HalfSample],
    anchors: Option<(&[Point2D], &[Point2D])>,
    run_dir: Option<&Path>,
    resume: Option<&Checkpoint>,
) -> Result<(Localizer, Vec<EpochRecord>)> {
    run.frames.validate()?;
    let want = run.expected_input()?;
    if run.model.input_size != want {
        return Err(Error::Config(format!(
            "localizer input_size {} differs from the stage input {want}",
            run.model.input_size
        )));
    }
    let stride = run.model.heatmap_stride;
    let t = &run.train;
    if t.task == TaskKind::LocalizationStage2 && anchors.is_none() {
        if t.crops_from_coarse {
            return Err(Error::Config("crops_from_coarse needs stage-1 predictions for every half".into()));
        }
        if t.crop_jitter == 0.0 {
            return Err(Error::Config("stage 2 needs crop_jitter > 0 or stage-1 predictions".into()));
        }
    }
    let src: Box<dyn BatchSource> = match t.task {
        TaskKind::LocalizationStage1 => Box::new(Stage1Source::new(train, &run.frames, stride, t.sigma, t.augment_shift)?),
        _ => Box::new(Stage2Source::new(train, anchors.map(|a| a.0), &run.frames, t.crop_jitter, stride, t.sigma)?),
    };
    let net = Localizer::new(run.model.clone())?;
    let echo = serde_json::to_value(run)?;
    let mut trainer = Trainer::new(net, ModelKind::Localizer, echo, t.clone(), run.optim, Objective::Heatmap(run.loss), train.len())?;
    if let Some(ck) = resume {
        trainer = trainer.resume(ck)?;
    }
    let val_anchors: Vec<Point2D> = match anchors {
        Some((_, v)) => v.to_vec(),
        None => val.iter().map(|h| h.ss).collect(),
    };
    let mut validate = |net: &Localizer| -> Result<f64> {
        if val.is_empty() {
            return Ok(f64::NAN);
        }
        let pts = match t.task {
            TaskKind::LocalizationStage1 => stage1_points(net, val, &run.frames)?,
            _ => stage2_points(net, val, &val_anchors, &run.frames)?,
        };
        Ok(mean_point_error(&pts, val))
    };
    trainer.fit(src.as_ref(), &mut validate, Selection::LowerIsBetter, run_dir)
}

/// Rebuild a localizer and its run settings from a checkpoint.
pub fn load_localizer(path: &Path) -> Result<(Localizer, LocalizerRun)> {
    let ck = Checkpoint::load(path)?;
    if ck.header.kind != ModelKind::Localizer {
        return Err(Error::Checkpoint(format!("{} does not hold a localizer", path.display())));
    }
    let run: LocalizerRun = serde_json::from_value(ck.header.config.clone())?;
    let mut net = Localizer::new(run.model.clone())?;
    ck.restore_store(&mut net.store)?;
    Ok((net, run))
}
