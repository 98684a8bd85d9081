//! Run configuration: one tree of module settings addressed by flat dotted
//! keys (`classifier.train.batch_size = 72`).

use std::collections::BTreeMap;
use std::path::Path;

use anglekit::data::synth::SynthConfig;
use anglekit::data::FrameConfig;
use anglekit::losses::{FBetaParams, FocalParams, HeatmapLoss, HybridParams, KRParams};
use anglekit::models::{ClassifierConfig, LocalizerConfig};
use anglekit::training::{ClassifierRun, LocalizerRun, Objective, OptimConfig, TaskKind, TrainConfig};
use anglekit::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-resolution frames and networks.
    Full,
    /// Small frames and networks for 128x128 synthetic scans.
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Image directory; empty means the manifest's own directory.
    pub images: String,
    pub train: String,
    /// Selection fold; empty disables model selection.
    pub val: String,
    pub split_ratio: f64,
    pub mirror_right: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapKind {
    Kr,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub focal: FocalParams,
    pub fbeta: FBetaParams,
    pub hybrid: HybridParams,
    pub kr: KRParams,
    pub heatmap: HeatmapKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    pub model: ClassifierConfig,
    pub train: TrainConfig,
    pub optim: OptimConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizerSection {
    pub model: LocalizerConfig,
    pub optim: OptimConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub frames: FrameConfig,
    pub loss: LossConfig,
    pub classifier: ClassifierSection,
    pub localizer: LocalizerSection,
}

/// Keys filled in from other settings rather than set directly.
fn is_derived(key: &str) -> bool {
    key.ends_with(".seed") || key.ends_with(".input_size") || key.ends_with(".task")
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (frames, cls_model, loc_model) = match preset {
            Preset::Full => (FrameConfig::default(), ClassifierConfig::default(), LocalizerConfig::default()),
            Preset::Desk => (FrameConfig::desk(), ClassifierConfig::desk(), LocalizerConfig::desk()),
        };
        let mut cls_train = TrainConfig::for_task(TaskKind::Classification);
        let mut stage1 = TrainConfig::for_task(TaskKind::LocalizationStage1);
        let mut stage2 = TrainConfig::for_task(TaskKind::LocalizationStage2);
        if preset == Preset::Desk {
            cls_train.batch_size = 24;
            cls_train.epochs = 15;
            for t in [&mut stage1, &mut stage2] {
                t.batch_size = 8;
                t.epochs = 8;
            }
            stage1.sigma = 2.0;
            stage2.sigma = 1.0;
        }
        let mut cfg = Self {
            preset,
            seed: 0,
            workers: 0,
            data: DataConfig {
                images: String::new(),
                train: String::new(),
                val: String::new(),
                split_ratio: 0.8,
                mirror_right: true,
            },
            synth: SynthConfig::default(),
            frames,
            loss: LossConfig {
                focal: FocalParams::default(),
                fbeta: FBetaParams::default(),
                hybrid: HybridParams::default(),
                kr: KRParams::default(),
                heatmap: HeatmapKind::Kr,
            },
            classifier: ClassifierSection {
                model: cls_model,
                train: cls_train,
                optim: OptimConfig::default(),
            },
            localizer: LocalizerSection {
                model: loc_model,
                optim: OptimConfig::default(),
                stage1,
                stage2,
            },
        };
        cfg.derive();
        cfg
    }

    /// Propagate the global seed and the frame sizes into module settings.
    fn derive(&mut self) {
        let s = self.seed;
        self.synth.seed = s;
        self.classifier.model.seed = s;
        self.classifier.train.seed = s;
        self.classifier.model.input_size = self.frames.cls_size;
        self.localizer.model.seed = s;
        self.localizer.stage1.seed = s;
        self.localizer.stage2.seed = s.wrapping_add(1);
        self.localizer.model.input_size = self.frames.stage1_padded;
        self.classifier.train.task = TaskKind::Classification;
        self.localizer.stage1.task = TaskKind::LocalizationStage1;
        self.localizer.stage2.task = TaskKind::LocalizationStage2;
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data.split_ratio > 0.0 && self.data.split_ratio < 1.0) {
            return Err(Error::Config(format!("data.split_ratio must be in (0, 1), got {}", self.data.split_ratio)));
        }
        self.synth.validate()?;
        self.frames.validate()?;
        self.loss.focal.validate()?;
        self.loss.fbeta.validate()?;
        self.classifier.model.validate()?;
        self.localizer.model.validate()?;
        for t in [&self.classifier.train, &self.localizer.stage1, &self.localizer.stage2] {
            t.validate()?;
        }
        self.classifier.optim.validate()?;
        self.localizer.optim.validate()?;
        Ok(())
    }

    pub fn classifier_run(&self) -> ClassifierRun {
        ClassifierRun {
            model: self.classifier.model.clone(),
            train: self.classifier.train.clone(),
            optim: self.classifier.optim,
            objective: Objective::Hybrid {
                hybrid: self.loss.hybrid,
                focal: self.loss.focal,
                fbeta: self.loss.fbeta,
            },
            frames: self.frames,
        }
    }

    pub fn localizer_run(&self, stage: u8) -> LocalizerRun {
        let mut model = self.localizer.model.clone();
        let train = if stage == 1 {
            self.localizer.stage1.clone()
        } else {
            model.input_size = self.frames.crop_padded.0;
            self.localizer.stage2.clone()
        };
        LocalizerRun {
            model,
            train,
            optim: self.localizer.optim,
            loss: match self.loss.heatmap {
                HeatmapKind::Kr => HeatmapLoss::Kr(self.loss.kr),
                HeatmapKind::Mse => HeatmapLoss::Mse { rho3: self.loss.kr.rho3 },
            },
            frames: self.frames,
        }
    }

    /// Every settable key with its current value, sorted.
    pub fn flatten(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten_into(&serde_json::to_value(self).expect("config serializes"), "", &mut out);
        out.retain(|k, _| !is_derived(k));
        out
    }

    /// `key = value` lines that [`RunConfig::load`] reads back to this config.
    pub fn to_text(&self) -> String {
        self.flatten()
            .into_iter()
            .map(|(k, v)| format!("{k} = {}\n", render(&v)))
            .collect()
    }

    /// Build from an optional config file and `key=value` overrides, applied
    /// in that order on top of the preset the settings name.
    pub fn load(file: Option<&Path>, sets: &[String], preset: Option<Preset>, seed: Option<u64>) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            pairs.extend(parse_lines(&text, &path.display().to_string())?);
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut base = Preset::Full;
        for (k, v) in &pairs {
            if k == "preset" {
                base = serde_json::from_value(parse_value(v))
                    .map_err(|_| Error::Config(format!("unknown preset `{v}`; use full or desk")))?;
            }
        }
        if let Some(p) = preset {
            base = p;
        }
        let start = Self::preset(base);
        let keys = start.flatten();
        let mut tree = serde_json::to_value(&start)?;
        for (k, v) in &pairs {
            if k == "preset" {
                continue;
            }
            if !keys.contains_key(k) {
                let hint = if is_derived(k) { " (derived from seed and frames)" } else { "" };
                return Err(Error::Config(format!("unknown config key `{k}`{hint}")));
            }
            set_path(&mut tree, k, parse_value(v));
        }
        let mut cfg: RunConfig =
            serde_json::from_value(tree).map_err(|e| Error::Config(format!("invalid config value: {e}")))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.derive();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_lines(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{source}:{}: expected key = value", i + 1)))?;
        let k = k.trim().to_string();
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(Error::Config(format!("{source}:{}: duplicate key `{k}`", i + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

/// JSON when the text parses as JSON, otherwise a bare string.
fn parse_value(v: &str) -> Value {
    serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()))
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) if !s.is_empty() && serde_json::from_str::<Value>(s).is_err() => s.clone(),
        other => other.to_string(),
    }
}

fn flatten_into(v: &Value, prefix: &str, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(child, &key, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_object_mut()
            .and_then(|m: &mut Map<String, Value>| m.get_mut(*part))
            .expect("key was checked against the schema");
    }
    node.as_object_mut()
        .expect("key was checked against the schema")
        .insert(parts[parts.len() - 1].to_string(), value);
}
