use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{EdSummary, ThresholdMetrics};
use crate::error::{Error, Result};

pub const ROUNDING_NOTE: &str = "Values rounded to two decimals, ties to even.";

/// Round to two decimals, ties to even. Scaling by 100 first snaps values
/// such as 12.005 onto the exact tie before rounding.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round_ties_even() / 100.0
}

pub fn fmt2(x: f64) -> String {
    if x.is_finite() {
        format!("{:.2}", round2(x))
    } else {
        "n/a".into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRow {
    pub method: String,
    pub auc: f64,
    pub metrics: ThresholdMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRow {
    pub method: String,
    pub ed: EdSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Compound-scaled encoder instead of the default four-stage one.
    pub scaled_encoder: bool,
    pub ppm: bool,
    pub kr_loss: bool,
    pub ed: EdSummary,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classification: Vec<ClassificationRow>,
    pub localization: Vec<LocalizationRow>,
    pub ablation: Vec<AblationRow>,
}

fn check(flag: bool) -> &'static str {
    if flag {
        "✓"
    } else {
        ""
    }
}

impl EvalReport {
    pub fn is_empty(&self) -> bool {
        self.classification.is_empty() && self.localization.is_empty() && self.ablation.is_empty()
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        if !self.classification.is_empty() {
            s.push_str("## Angle-closure classification\n\n| Method | AUC | SEN | SPE | ACC |\n|---|---|---|---|---|\n");
            for r in &self.classification {
                let m = &r.metrics;
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} |",
                    r.method,
                    fmt2(r.auc),
                    fmt2(m.sen),
                    fmt2(m.spe),
                    fmt2(m.acc)
                );
            }
            s.push('\n');
        }
        let ed_head = "Left ED error (pixel) | Right ED error (pixel) | Avg ED error (pixel)";
        if !self.localization.is_empty() {
            let _ = write!(s, "## Scleral-spur localization\n\n| Method | {ed_head} |\n|---|---|---|---|\n");
            for r in &self.localization {
                let _ = writeln!(s, "| {} | {} | {} | {} |", r.method, fmt2(r.ed.left), fmt2(r.ed.right), fmt2(r.ed.avg));
            }
            s.push('\n');
        }
        if !self.ablation.is_empty() {
            let _ = write!(
                s,
                "## Localization ablation\n\n| Encoder | PPM | KR loss | {ed_head} |\n|---|---|---|---|---|---|\n"
            );
            for r in &self.ablation {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} |",
                    check(r.scaled_encoder),
                    check(r.ppm),
                    check(r.kr_loss),
                    fmt2(r.ed.left),
                    fmt2(r.ed.right),
                    fmt2(r.ed.avg)
                );
            }
            s.push_str("\nAn unchecked encoder is the default four conv/pool stage encoder.\n\n");
        }
        s.push_str(ROUNDING_NOTE);
        s.push('\n');
        s
    }

    /// One CSV with a `table` column naming the block each row belongs to.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "table", "method", "encoder", "ppm", "kr_loss", "auc", "sen", "spe", "acc", "left_ed", "right_ed", "avg_ed",
        ])?;
        let e = String::new;
        for r in &self.classification {
            let m = &r.metrics;
            w.write_record([
                "classification".into(),
                r.method.clone(),
                e(),
                e(),
                e(),
                fmt2(r.auc),
                fmt2(m.sen),
                fmt2(m.spe),
                fmt2(m.acc),
                e(),
                e(),
                e(),
            ])?;
        }
        for r in &self.localization {
            w.write_record([
                "localization".into(),
                r.method.clone(),
                e(),
                e(),
                e(),
                e(),
                e(),
                e(),
                e(),
                fmt2(r.ed.left),
                fmt2(r.ed.right),
                fmt2(r.ed.avg),
            ])?;
        }
        for r in &self.ablation {
            let flag = |b: bool| if b { "1" } else { "0" }.to_string();
            w.write_record([
                "ablation".into(),
                e(),
                if r.scaled_encoder { "scaled_mbconv" } else { "default4" }.into(),
                flag(r.ppm),
                flag(r.kr_loss),
                e(),
                e(),
                e(),
                e(),
                fmt2(r.ed.left),
                fmt2(r.ed.right),
                fmt2(r.ed.avg),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Write `report.md` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let md = dir.join("report.md");
        std::fs::write(&md, self.to_markdown()).map_err(|e| Error::io(&md, e))?;
        let csv_path = dir.join("report.csv");
        std::fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))
    }
}
