use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sources::ClsSource;
use super::{Checkpoint, EpochRecord, ModelKind, Objective, OptimConfig, Selection, TaskKind, TrainConfig, Trainer};
use crate::data::{resize_for_task, FrameConfig, HalfSample, Task};
use crate::error::{Error, Result};
use crate::evaluation::{roc_auc, ScoredSample};
use crate::models::{Classifier, ClassifierConfig};
use crate::raster::Raster;

/// Everything that defines a classification run; echoed into checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRun {
    pub model: ClassifierConfig,
    pub train: TrainConfig,
    pub optim: OptimConfig,
    pub objective: Objective,
    pub frames: FrameConfig,
}

impl Default for ClassifierRun {
    fn default() -> Self {
        Self {
            model: ClassifierConfig::default(),
            train: TrainConfig::for_task(TaskKind::Classification),
            optim: OptimConfig::default(),
            objective: Objective::Hybrid {
                hybrid: Default::default(),
                focal: Default::default(),
                fbeta: Default::default(),
            },
            frames: FrameConfig::default(),
        }
    }
}

/// Closure probability per half.
pub fn classify_halves(net: &Classifier, halves: &[HalfSample], frames: &FrameConfig) -> Result<Vec<ScoredSample>> {
    let inputs: Vec<Raster> = halves
        .iter()
        .map(|h| resize_for_task(h, Task::Classification, frames).map(|(r, _)| r))
        .collect::<Result<_>>()?;
    let scores = net.predict(&inputs)?;
    Ok(halves
        .iter()
        .zip(scores)
        .map(|(h, score)| ScoredSample {
            image_id: h.image_id.clone(),
            side: h.side,
            score,
            label: h.label,
        })
        .collect())
}

/// Train on `train` halves, selecting the epoch with the best half-level AUC
/// on `val` (the last epoch when `val` has a single class or is empty).
pub fn train_classifier(
    run: &ClassifierRun,
    train: &[HalfSample],
    val: &[HalfSample],
    run_dir: Option<&Path>,
    resume: Option<&Checkpoint>,
) -> Result<(Classifier, Vec<EpochRecord>)> {
    run.frames.validate()?;
    if run.model.input_size != run.frames.cls_size {
        return Err(Error::Config(format!(
            "classifier input_size {} differs from frames.cls_size {}",
            run.model.input_size, run.frames.cls_size
        )));
    }
    if !matches!(run.objective, Objective::Hybrid { .. }) {
        return Err(Error::Config("classification needs the hybrid objective".into()));
    }
    let src = ClsSource::new(train, &run.frames, run.train.augment_shift)?;
    let net = Classifier::new(run.model.clone())?;
    let echo = serde_json::to_value(run)?;
    let mut trainer = Trainer::new(net, ModelKind::Classifier, echo, run.train.clone(), run.optim, run.objective, train.len())?;
    if let Some(ck) = resume {
        trainer = trainer.resume(ck)?;
    }
    let mut validate = |net: &Classifier| -> Result<f64> {
        if val.is_empty() {
            return Ok(f64::NAN);
        }
        match roc_auc(&classify_halves(net, val, &run.frames)?) {
            Ok(auc) => Ok(auc),
            Err(Error::Metric(_)) => Ok(f64::NAN),
            Err(e) => Err(e),
        }
    };
    trainer.fit(&src, &mut validate, Selection::HigherIsBetter, run_dir)
}

/// Rebuild a classifier and its run settings from a checkpoint.
pub fn load_classifier(path: &Path) -> Result<(Classifier, ClassifierRun)> {
    let ck = Checkpoint::load(path)?;
    if ck.header.kind != ModelKind::Classifier {
        return Err(Error::Checkpoint(format!("{} does not hold a classifier", path.display())));
    }
    let run: ClassifierRun = serde_json::from_value(ck.header.config.clone())?;
    let mut net = Classifier::new(run.model.clone())?;
    ck.restore_store(&mut net.store)?;
    Ok((net, run))
}
