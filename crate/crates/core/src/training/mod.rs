//! Seeded, resumable training loops.
//!
//! Every random choice derives from the run seed: the epoch shuffle uses
//! stream `u64::MAX - epoch` and per-sample augmentation uses stream
//! `(epoch << 32) | index` of a ChaCha8 generator seeded with the run seed, so
//! a resumed run replays the same batches without storing generator state.

pub mod checkpoint;
mod classification;
mod localization;
pub mod optim;
pub mod sources;

use std::io::Write as _;
use std::path::Path;

use anglekit_tensor::{Graph, Mode, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{hybrid_loss, FBetaParams, FocalParams, HeatmapLoss, HybridParams, LossValue};
use crate::models::Network;

pub use checkpoint::{Checkpoint, ModelKind, TrainState};
pub use classification::{classify_halves, load_classifier, train_classifier, ClassifierRun};
pub use localization::{load_localizer, mean_point_error, stage1_points, stage2_points, train_localizer, LocalizerRun};
pub use optim::{cosine_lr, Adam, OptimConfig};

pub const RNG_DERIVATION: &str = "chacha8(seed); shuffle stream u64::MAX-epoch; sample stream (epoch<<32)|index";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    LocalizationStage1,
    LocalizationStage2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Max offset of stage-2 crop centers from their anchor, stage-1 frame px.
    pub crop_jitter: f64,
    /// Max random translation applied to training inputs, px (0 disables).
    pub augment_shift: usize,
    /// Anchor stage-2 crops on stage-1 predictions instead of ground truth.
    pub crops_from_coarse: bool,
    /// Gaussian sigma of heatmap targets, heatmap px.
    pub sigma: f64,
}

impl TrainConfig {
    pub fn for_task(task: TaskKind) -> Self {
        Self {
            task,
            batch_size: match task {
                TaskKind::Classification => 72,
                _ => 27,
            },
            epochs: 100,
            seed: 0,
            crop_jitter: 32.0,
            augment_shift: 0,
            crops_from_coarse: false,
            sigma: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.crop_jitter >= 0.0 && self.sigma > 0.0) {
            return Err(Error::Config("crop_jitter must be >= 0 and sigma > 0".into()));
        }
        Ok(())
    }
}

pub fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - epoch as u64);
    rng
}

pub fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Network inputs and flattened targets for one batch.
pub struct Batch {
    pub inputs: Tensor,
    pub targets: Vec<f64>,
}

pub trait BatchSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Assemble samples `indices` for `epoch`; any randomness comes from
    /// [`sample_rng`] so the result depends only on its arguments.
    fn batch(&self, indices: &[usize], epoch: usize, seed: u64) -> Result<Batch>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    Hybrid {
        hybrid: HybridParams,
        focal: FocalParams,
        fbeta: FBetaParams,
    },
    Heatmap(HeatmapLoss),
}

impl Objective {
    pub fn eval(&self, pred: &[f64], target: &[f64], batch: usize) -> Result<LossValue> {
        match self {
            Objective::Hybrid { hybrid, focal, fbeta } => hybrid_loss(pred, target, hybrid, focal, fbeta),
            Objective::Heatmap(l) => l.eval_batch(pred, target, batch),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    HigherIsBetter,
    LowerIsBetter,
}

impl Selection {
    fn improves(self, candidate: f64, best: Option<f64>) -> bool {
        if !candidate.is_finite() {
            return false;
        }
        match (self, best) {
            (_, None) => true,
            (Selection::HigherIsBetter, Some(b)) => candidate > b,
            (Selection::LowerIsBetter, Some(b)) => candidate < b,
        }
    }
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "lr", "train_loss", "val_metric"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.train_loss.to_string(),
            r.val_metric.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub struct Trainer<N: Network> {
    pub net: N,
    pub adam: Adam,
    pub cfg: TrainConfig,
    pub objective: Objective,
    pub state: TrainState,
    /// Learning rate used at every step taken by this process.
    pub lr_trace: Vec<f64>,
    kind: ModelKind,
    config_echo: serde_json::Value,
    n_samples: usize,
    best: Option<ParamStore>,
}

impl<N: Network> Trainer<N> {
    pub fn new(
        net: N,
        kind: ModelKind,
        config_echo: serde_json::Value,
        cfg: TrainConfig,
        optim: OptimConfig,
        objective: Objective,
        n_samples: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if n_samples == 0 {
            return Err(Error::Invalid("empty training fold".into()));
        }
        let adam = Adam::new(optim, net.store())?;
        let steps_per_epoch = n_samples.div_ceil(cfg.batch_size);
        let state = TrainState {
            step: 0,
            total_steps: (steps_per_epoch * cfg.epochs) as u64,
            epoch: 0,
            batch_in_epoch: 0,
            adam_t: 0,
            seed: cfg.seed,
            rng: RNG_DERIVATION.into(),
            epoch_loss_sum: 0.0,
            epoch_batches: 0,
            history: Vec::new(),
            best_metric: None,
            best_epoch: None,
        };
        Ok(Self {
            net,
            adam,
            cfg,
            objective,
            state,
            lr_trace: Vec::new(),
            kind,
            config_echo,
            n_samples,
            best: None,
        })
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(mut self, ck: &Checkpoint) -> Result<Self> {
        if ck.header.kind != self.kind || ck.header.config != self.config_echo {
            return Err(Error::Checkpoint("checkpoint was written by a different configuration".into()));
        }
        let state = ck
            .header
            .state
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?;
        ck.restore_store(self.net.store_mut())?;
        ck.restore_adam(&mut self.adam, self.net.store())?;
        self.state = state;
        Ok(self)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut state = self.state.clone();
        state.adam_t = self.adam.t;
        Checkpoint::capture(
            self.kind,
            self.config_echo.clone(),
            self.net.store(),
            Some(&self.adam),
            Some(state),
        )
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.n_samples.div_ceil(self.cfg.batch_size)
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.cfg.epochs
    }

    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_samples).collect();
        order.shuffle(&mut shuffle_rng(self.cfg.seed, epoch));
        order
    }

    /// One optimizer step on the next batch; returns the batch loss.
    pub fn step(&mut self, src: &dyn BatchSource) -> Result<f64> {
        if self.is_finished() {
            return Err(Error::Invalid("training already finished".into()));
        }
        if src.len() != self.n_samples {
            return Err(Error::Invalid(format!(
                "batch source has {} samples, trainer expects {}",
                src.len(),
                self.n_samples
            )));
        }
        let order = self.epoch_order(self.state.epoch);
        let bs = self.cfg.batch_size;
        let start = self.state.batch_in_epoch * bs;
        let indices = &order[start..(start + bs).min(order.len())];
        let batch = src.batch(indices, self.state.epoch, self.cfg.seed)?;
        let mut g = Graph::new(Mode::Train);
        let x = g.input(batch.inputs, false);
        let y = self.net.forward(&mut g, x)?;
        let pred: Vec<f64> = g.value(y).data().iter().map(|&v| f64::from(v)).collect();
        let lv = self.objective.eval(&pred, &batch.targets, indices.len())?;
        if !lv.value.is_finite() {
            return Err(Error::Diverged(format!("loss became {} at step {}", lv.value, self.state.step)));
        }
        let updates = g.take_buffer_updates();
        let seed = Tensor::new(g.shape(y).to_vec(), lv.grad.iter().map(|&v| v as f32).collect())?;
        let grads = g.backward(y, seed)?;
        let lr = cosine_lr(self.state.step, self.state.total_steps, self.adam.cfg.lr0)?;
        self.lr_trace.push(lr);
        self.adam.step(self.net.store_mut(), &grads.params(), lr)?;
        self.net.store_mut().apply_buffer_updates(updates)?;
        self.state.step += 1;
        self.state.adam_t = self.adam.t;
        self.state.batch_in_epoch += 1;
        self.state.epoch_loss_sum += lv.value;
        self.state.epoch_batches += 1;
        Ok(lv.value)
    }

    pub fn epoch_complete(&self) -> bool {
        self.state.batch_in_epoch == self.steps_per_epoch()
    }

    /// Close the current epoch with its validation metric; returns whether
    /// this epoch is the best so far.
    pub fn finish_epoch(&mut self, val_metric: f64, selection: Selection) -> bool {
        let s = &mut self.state;
        let record = EpochRecord {
            epoch: s.epoch + 1,
            lr: self.lr_trace.last().copied().unwrap_or(f64::NAN),
            train_loss: s.epoch_loss_sum / s.epoch_batches.max(1) as f64,
            val_metric,
        };
        log::info!(
            "epoch {} lr {:.3e} train_loss {:.5} val {:.4}",
            record.epoch,
            record.lr,
            record.train_loss,
            record.val_metric
        );
        s.history.push(record);
        let improved = selection.improves(val_metric, s.best_metric);
        if improved {
            s.best_metric = Some(val_metric);
            s.best_epoch = Some(s.epoch + 1);
            self.best = Some(self.net.store().clone());
        }
        s.epoch += 1;
        s.batch_in_epoch = 0;
        s.epoch_loss_sum = 0.0;
        s.epoch_batches = 0;
        improved
    }

    /// Run to completion, validating after every epoch. With `run_dir`,
    /// writes `last.ckpt`, `best.ckpt` and `history.csv` as it goes, and a
    /// resumed run picks its best weights back up from `best.ckpt`. The
    /// returned network holds the best epoch's weights.
    pub fn fit(
        mut self,
        src: &dyn BatchSource,
        validate: &mut dyn FnMut(&N) -> Result<f64>,
        selection: Selection,
        run_dir: Option<&Path>,
    ) -> Result<(N, Vec<EpochRecord>)> {
        if let Some(dir) = run_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let best_path = dir.join("best.ckpt");
            if self.best.is_none() && self.state.best_epoch.is_some() && best_path.exists() {
                let mut store = self.net.store().clone();
                Checkpoint::load(&best_path)?.restore_store(&mut store)?;
                self.best = Some(store);
            }
        }
        while !self.is_finished() {
            while !self.epoch_complete() {
                self.step(src)?;
            }
            let metric = validate(&self.net)?;
            let improved = self.finish_epoch(metric, selection);
            if let Some(dir) = run_dir {
                // Until some epoch has a usable metric, best follows last.
                if improved || self.state.best_metric.is_none() {
                    Checkpoint::capture(self.kind, self.config_echo.clone(), self.net.store(), None, None)
                        .save(&dir.join("best.ckpt"))?;
                }
                self.checkpoint().save(&dir.join("last.ckpt"))?;
                write_history(&dir.join("history.csv"), &self.state.history)?;
            }
        }
        if let Some(best) = self.best.take() {
            *self.net.store_mut() = best;
        }
        let _ = std::io::stderr().flush();
        Ok((self.net, self.state.history))
    }
}
