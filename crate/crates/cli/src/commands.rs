use std::path::{Path, PathBuf};

use anglekit::data::synth::synth_generate;
use anglekit::data::{load_manifest, load_manifest_at, make_split, write_manifest, DatasetManifest, HalfSample, Side, SplitOptions};
use anglekit::evaluation::plots::{ed_histogram, roc_plot};
use anglekit::evaluation::{
    ed_error, image_level, roc_auc, roc_curve, threshold_metrics, AblationRow, ClassificationRow, EvalReport,
    LocalizationResult, LocalizationRow, ScoredSample, DEFAULT_THRESHOLD,
};
use anglekit::geometry::Point2D;
use anglekit::losses::HeatmapLoss;
use anglekit::models::{localize_two_stage, EncoderVariant, HeatmapPredictor, Network};
use anglekit::training::sources::load_halves;
use anglekit::training::{
    classify_halves, load_classifier, load_localizer, stage1_points, train_classifier, train_localizer, Checkpoint,
    ModelKind,
};
use anglekit::{Error, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{Command, Common, EvalTask, TrainArgs};

const ED_BINS: usize = 20;

pub fn run(cmd: Command, common: &Common) -> Result<()> {
    let cfg = RunConfig::load(
        common.config.as_deref(),
        &common.sets,
        common.preset.map(Into::into),
        common.seed,
    )?;
    let workers = common.workers.unwrap_or(cfg.workers);
    if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
    }
    let out = common.out.as_deref();
    match cmd {
        Command::Synth { count } => synth(cfg, count, out),
        Command::Prepare { manifest } => prepare(&cfg, &manifest, out),
        Command::TrainCls(args) => train_cls(cfg, &args, out),
        Command::TrainLoc { stage, stage1, train } => train_loc(cfg, stage, stage1.as_deref(), &train, out),
        Command::Predict {
            manifest,
            images,
            cls,
            stage1,
            stage2,
        } => predict(
            &cfg,
            &manifest,
            images.as_deref(),
            cls.as_deref(),
            stage1.as_deref(),
            stage2.as_deref(),
            out,
        ),
        Command::Eval {
            pred,
            gt,
            task,
            method,
            ablation,
        } => eval(&pred, &gt, task, &method, ablation.as_deref(), out),
        Command::Report { inputs } => report(&inputs, out),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Invalid(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Load a manifest whose images live in `images` (default: next to the
/// manifest).
fn read_manifest(path: &Path, images: Option<&Path>) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(Error::Config(format!("manifest {} not found", path.display())));
    }
    let m = match images {
        Some(root) => load_manifest_at(path, root),
        None => load_manifest(path),
    };
    m.map_err(|e| match e {
        Error::Image { path, source } => Error::Invalid(format!("image {}: {source}", path.display())),
        Error::Io { path, source } => Error::Invalid(format!("{}: {source}", path.display())),
        e => e,
    })
}

fn non_empty(s: &str) -> Option<&Path> {
    (!s.is_empty()).then(|| Path::new(s))
}

fn synth(mut cfg: RunConfig, count: Option<usize>, out: Option<&Path>) -> Result<()> {
    if let Some(n) = count {
        cfg.synth.count = n;
    }
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os("ANGLEKIT_CACHE") {
            Some(c) => PathBuf::from(c).join("synth"),
            None => PathBuf::from("synth"),
        },
    };
    let m = synth_generate(&cfg.synth, &dir)?;
    let closed = m.records.iter().filter(|r| r.label.as_f64() == 1.0).count();
    info!("wrote {} images ({closed} closure) to {}", m.len(), dir.display());
    Ok(())
}

fn prepare(cfg: &RunConfig, manifest: &Path, out: Option<&Path>) -> Result<()> {
    let m = read_manifest(manifest, non_empty(&cfg.data.images))?;
    for rec in &m.records {
        let path = m.image_path(&rec.image_id);
        if !path.is_file() {
            return Err(Error::Invalid(format!("missing image {}", path.display())));
        }
    }
    let (train, test) = make_split(&m, cfg.data.split_ratio, cfg.seed)?;
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    create_dir(&dir)?;
    write_manifest(&dir.join("train.csv"), &train.records)?;
    write_manifest(&dir.join("test.csv"), &test.records)?;
    info!(
        "{} images valid; wrote train.csv ({}) and test.csv ({}) to {}",
        m.len(),
        train.len(),
        test.len(),
        dir.display()
    );
    Ok(())
}

/// Train and validation halves named by the flags or the config.
fn training_halves(cfg: &mut RunConfig, args: &TrainArgs) -> Result<(Vec<HalfSample>, Vec<HalfSample>)> {
    if let Some(p) = &args.train {
        cfg.data.train = p.display().to_string();
    }
    if let Some(p) = &args.val {
        cfg.data.val = p.display().to_string();
    }
    if let Some(p) = &args.images {
        cfg.data.images = p.display().to_string();
    }
    let images = non_empty(&cfg.data.images).map(Path::to_path_buf);
    let train_path = non_empty(&cfg.data.train)
        .ok_or_else(|| Error::Config("no training manifest; pass --train or set data.train".into()))?
        .to_path_buf();
    let opts = SplitOptions {
        mirror_right: cfg.data.mirror_right,
    };
    let train = load_halves(&read_manifest(&train_path, images.as_deref())?, opts)?;
    let val = match non_empty(&cfg.data.val) {
        Some(p) => load_halves(&read_manifest(p, images.as_deref())?, opts)?,
        None => {
            warn!("no validation manifest; keeping the last epoch");
            Vec::new()
        }
    };
    info!("{} training halves, {} validation halves", train.len(), val.len());
    Ok((train, val))
}

fn run_dir(out: Option<&Path>, default: &str, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs").join(default));
    create_dir(&dir)?;
    write_file(&dir.join("config.txt"), &cfg.to_text())?;
    write_file(&dir.join("config.json"), &(serde_json::to_string_pretty(cfg)? + "\n"))?;
    Ok(dir)
}

fn load_resume(args: &TrainArgs) -> Result<Option<Checkpoint>> {
    args.resume.as_deref().map(Checkpoint::load).transpose()
}

fn save_model(net: &dyn Network, kind: ModelKind, echo: serde_json::Value, dir: &Path) -> Result<()> {
    let path = dir.join("model.ckpt");
    Checkpoint::capture(kind, echo, net.store(), None, None).save(&path)?;
    info!("saved {}", path.display());
    Ok(())
}

fn train_cls(mut cfg: RunConfig, args: &TrainArgs, out: Option<&Path>) -> Result<()> {
    let (train, val) = training_halves(&mut cfg, args)?;
    let run = cfg.classifier_run();
    let dir = run_dir(out, "cls", &cfg)?;
    let resume = load_resume(args)?;
    let (net, history) = train_classifier(&run, &train, &val, Some(&dir), resume.as_ref())?;
    if let Some(last) = history.last() {
        info!("finished at epoch {} with train loss {:.4}", last.epoch, last.train_loss);
    }
    save_model(&net, ModelKind::Classifier, serde_json::to_value(&run)?, &dir)
}

fn train_loc(mut cfg: RunConfig, stage: u8, stage1: Option<&Path>, args: &TrainArgs, out: Option<&Path>) -> Result<()> {
    if stage == 1 && stage1.is_some() {
        return Err(Error::Config("--stage1 only applies to --stage 2".into()));
    }
    let (train, val) = training_halves(&mut cfg, args)?;
    let run = cfg.localizer_run(stage);
    let dir = run_dir(out, &format!("loc_stage{stage}"), &cfg)?;
    let anchors = match stage1 {
        Some(p) => {
            let (coarse, coarse_run) = load_localizer(p)?;
            if coarse_run.frames != run.frames {
                return Err(Error::Config("stage-1 checkpoint was trained with different frames".into()));
            }
            let pick = |halves: &[HalfSample]| -> Result<Vec<Point2D>> {
                Ok(stage1_points(&coarse, halves, &run.frames)?
                    .into_iter()
                    .zip(halves)
                    .map(|(p, h)| p.unwrap_or(h.ss))
                    .collect())
            };
            Some((pick(&train)?, pick(&val)?))
        }
        None => None,
    };
    let resume = load_resume(args)?;
    let (net, history) = train_localizer(
        &run,
        &train,
        &val,
        anchors.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())),
        Some(&dir),
        resume.as_ref(),
    )?;
    if let Some(last) = history.last() {
        info!("finished at epoch {} with train loss {:.4}", last.epoch, last.train_loss);
    }
    save_model(&net, ModelKind::Localizer, serde_json::to_value(&run)?, &dir)
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    image_id: String,
    side: String,
    score: Option<f64>,
    pred_x: Option<f64>,
    pred_y: Option<f64>,
}

fn predict(
    cfg: &RunConfig,
    manifest: &Path,
    images: Option<&Path>,
    cls: Option<&Path>,
    stage1: Option<&Path>,
    stage2: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    if cls.is_none() && stage1.is_none() {
        return Err(Error::Config("pass --cls and/or --stage1".into()));
    }
    if stage2.is_some() && stage1.is_none() {
        return Err(Error::Config("--stage2 needs --stage1".into()));
    }
    let m = read_manifest(manifest, images.or(non_empty(&cfg.data.images)))?;
    let halves = load_halves(
        &m,
        SplitOptions {
            mirror_right: cfg.data.mirror_right,
        },
    )?;
    let mut rows: Vec<PredictionRow> = halves
        .iter()
        .map(|h| PredictionRow {
            image_id: h.image_id.clone(),
            side: h.side.as_str().to_string(),
            score: None,
            pred_x: None,
            pred_y: None,
        })
        .collect();
    if let Some(p) = cls {
        let (net, run) = load_classifier(p)?;
        for (row, s) in rows.iter_mut().zip(classify_halves(&net, &halves, &run.frames)?) {
            row.score = Some(s.score);
        }
    }
    if let Some(p1) = stage1 {
        let (coarse, run1) = load_localizer(p1)?;
        let points: Vec<Option<Point2D>> = match stage2 {
            Some(p2) => {
                let (fine, run2) = load_localizer(p2)?;
                if run1.frames != run2.frames {
                    return Err(Error::Config("stage checkpoints were trained with different frames".into()));
                }
                localize_two_stage(&coarse, &fine as &dyn HeatmapPredictor, &halves, &run1.frames)?
                    .into_iter()
                    .map(|o| o.ok().map(|o| o.refined))
                    .collect()
            }
            None => stage1_points(&coarse, &halves, &run1.frames)?
                .into_iter()
                .zip(&halves)
                .map(|(p, h)| p.ok().map(|p| h.to_raw.apply(p)))
                .collect(),
        };
        let failed = points.iter().filter(|p| p.is_none()).count();
        if failed > 0 {
            warn!("{failed} halves had no heatmap response; their points are left empty");
        }
        for (row, p) in rows.iter_mut().zip(points) {
            row.pred_x = p.map(|p| p.x);
            row.pred_y = p.map(|p| p.y);
        }
    }
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    create_dir(&dir)?;
    let path = dir.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&path))?;
    info!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("predictions {}: {e}", path.display())))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Manifest { line: i + 2, msg: e.to_string() }))
        .collect()
}

fn classification_row(method: String, samples: &[ScoredSample]) -> Result<ClassificationRow> {
    Ok(ClassificationRow {
        method,
        auc: roc_auc(samples)?,
        metrics: threshold_metrics(samples, DEFAULT_THRESHOLD)?,
    })
}

fn eval(pred: &Path, gt: &Path, task: EvalTask, method: &str, ablation: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let m = read_manifest(gt, None)?;
    let rows = read_predictions(pred)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("eval"));
    create_dir(&dir)?;
    let mut report = EvalReport::default();
    let mut samples = Vec::new();
    let mut results = Vec::new();
    let mut skipped = 0usize;
    for row in &rows {
        let side = Side::parse(&row.side).ok_or_else(|| Error::Invalid(format!("unknown side `{}`", row.side)))?;
        let Some(rec) = m.records.iter().find(|r| r.image_id == row.image_id) else {
            return Err(Error::Invalid(format!("`{}` is not in the ground truth", row.image_id)));
        };
        match row.score {
            Some(score) => samples.push(ScoredSample {
                image_id: rec.image_id.clone(),
                side,
                score,
                label: rec.label,
            }),
            None if task != EvalTask::Localization => skipped += 1,
            None => {}
        }
        match (row.pred_x, row.pred_y) {
            (Some(x), Some(y)) => results.push(LocalizationResult {
                image_id: rec.image_id.clone(),
                side,
                pred: Point2D::new(x, y),
                gt: rec.point(side),
            }),
            _ if task != EvalTask::Classification => skipped += 1,
            _ => {}
        }
    }
    if skipped > 0 {
        warn!("skipped {skipped} missing predictions");
    }
    if task != EvalTask::Localization {
        let images = image_level(&samples);
        report.classification.push(classification_row(method.to_string(), &images)?);
        report.classification.push(classification_row(format!("{method} (per half)"), &samples)?);
        roc_plot(&roc_curve(&images)?, &dir.join("roc.png"))?;
    }
    if task != EvalTask::Classification {
        let ed = ed_error(&results)?;
        report.localization.push(LocalizationRow {
            method: method.to_string(),
            ed,
        });
        let errors: Vec<f64> = results.iter().map(LocalizationResult::error).collect();
        ed_histogram(&errors, ED_BINS, &dir.join("ed_hist.png"))?;
        if let Some(p) = ablation {
            let (_, run) = load_localizer(p)?;
            report.ablation.push(AblationRow {
                scaled_encoder: run.model.encoder.variant == EncoderVariant::ScaledMbconv,
                ppm: run.model.ppm_enabled,
                kr_loss: matches!(run.loss, HeatmapLoss::Kr(_)),
                ed,
            });
        }
    } else if ablation.is_some() {
        return Err(Error::Config("--ablation needs localization metrics".into()));
    }
    finish_report(&report, &dir)
}

fn finish_report(report: &EvalReport, dir: &Path) -> Result<()> {
    report.write(dir)?;
    write_file(&dir.join("eval.json"), &(serde_json::to_string_pretty(report)? + "\n"))?;
    print!("{}", report.to_markdown());
    info!("wrote reports to {}", dir.display());
    Ok(())
}

fn report(inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut merged = EvalReport::default();
    for dir in inputs {
        let path = if dir.is_dir() { dir.join("eval.json") } else { dir.clone() };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let r: EvalReport = serde_json::from_str(&text)?;
        merged.classification.extend(r.classification);
        merged.localization.extend(r.localization);
        merged.ablation.extend(r.ablation);
    }
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("report"));
    create_dir(&dir)?;
    finish_report(&merged, &dir)
}
