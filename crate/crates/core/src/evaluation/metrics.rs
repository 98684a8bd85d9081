use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Label, Side};
use crate::error::{Error, Result};
use crate::geometry::Point2D;

/// Classification threshold used for SEN/SPE/ACC unless stated otherwise.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub image_id: String,
    pub side: Side,
    pub score: f64,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub image_id: String,
    pub side: Side,
    pub pred: Point2D,
    pub gt: Point2D,
}

impl LocalizationResult {
    pub fn error(&self) -> f64 {
        self.pred.distance(&self.gt)
    }
}

fn class_counts(samples: &[ScoredSample]) -> (usize, usize) {
    let pos = samples.iter().filter(|s| s.label == Label::Closure).count();
    (pos, samples.len() - pos)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, via average ranks.
pub fn roc_auc(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = class_counts(samples);
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!("AUC needs both classes, got {pos} positive and {neg} negative")));
    }
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Metric(format!("non-finite score for `{}`", s.image_id)));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].score.total_cmp(&samples[b].score));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].score == samples[order[i]].score {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j]
            .iter()
            .filter(|&&k| samples[k].label == Label::Closure)
            .count();
        rank_sum += avg_rank * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC curve points `(false positive rate, true positive rate)` from the
/// strictest threshold to the loosest.
pub fn roc_curve(samples: &[ScoredSample]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = class_counts(samples);
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("ROC curve needs both classes".into()));
    }
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, s) in sorted.iter().enumerate() {
        match s.label {
            Label::Closure => tp += 1,
            Label::Open => fp += 1,
        }
        if k + 1 == sorted.len() || sorted[k + 1].score != s.score {
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    Ok(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub sen: f64,
    pub spe: f64,
    pub acc: f64,
}

/// Sensitivity, specificity and accuracy with `score >= threshold` positive.
pub fn threshold_metrics(samples: &[ScoredSample], threshold: f64) -> Result<ThresholdMetrics> {
    if samples.is_empty() {
        return Err(Error::Metric("no samples".into()));
    }
    let (pos, neg) = class_counts(samples);
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "SEN and SPE need both classes, got {pos} positive and {neg} negative"
        )));
    }
    let (mut tp, mut tn) = (0usize, 0usize);
    for s in samples {
        let predicted = s.score >= threshold;
        match (s.label, predicted) {
            (Label::Closure, true) => tp += 1,
            (Label::Open, false) => tn += 1,
            _ => {}
        }
    }
    Ok(ThresholdMetrics {
        sen: tp as f64 / pos as f64,
        spe: tn as f64 / neg as f64,
        acc: (tp + tn) as f64 / samples.len() as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdSummary {
    pub left: f64,
    pub right: f64,
    pub avg: f64,
}

impl EdSummary {
    pub fn from_sides(left: f64, right: f64) -> Self {
        Self {
            left,
            right,
            avg: (left + right) / 2.0,
        }
    }
}

/// Per-side mean Euclidean error in raw pixels; `avg` is the mean of the two sides.
pub fn ed_error(results: &[LocalizationResult]) -> Result<EdSummary> {
    let side_mean = |side: Side| -> Result<f64> {
        let errs: Vec<f64> = results.iter().filter(|r| r.side == side).map(|r| r.error()).collect();
        if errs.is_empty() {
            return Err(Error::Metric(format!("no {side} results")));
        }
        if errs.iter().any(|e| !e.is_finite()) {
            return Err(Error::Metric(format!("non-finite {side} point")));
        }
        Ok(errs.iter().sum::<f64>() / errs.len() as f64)
    };
    Ok(EdSummary::from_sides(side_mean(Side::Left)?, side_mean(Side::Right)?))
}

/// Mean error over every result regardless of side.
pub fn mean_error(results: &[LocalizationResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Metric("no localization results".into()));
    }
    Ok(results.iter().map(LocalizationResult::error).sum::<f64>() / results.len() as f64)
}

/// One sample per image scored by the larger of its half scores.
pub fn image_level(samples: &[ScoredSample]) -> Vec<ScoredSample> {
    let mut by_image: BTreeMap<&str, ScoredSample> = BTreeMap::new();
    for s in samples {
        by_image
            .entry(&s.image_id)
            .and_modify(|e| e.score = e.score.max(s.score))
            .or_insert_with(|| s.clone());
    }
    by_image.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scored(scores: &[f64], labels: &[u8]) -> Vec<ScoredSample> {
        scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&score, &l))| ScoredSample {
                image_id: format!("i{i}"),
                side: Side::Left,
                score,
                label: Label::from_int(l as i64).unwrap(),
            })
            .collect()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&scored(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1])).unwrap(), 0.75);
        assert_eq!(roc_auc(&scored(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1])).unwrap(), 1.0);
        assert_eq!(roc_auc(&scored(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(roc_auc(&scored(&[0.5, 0.5], &[0, 1])).unwrap(), 0.5);
        assert!(roc_auc(&scored(&[0.5, 0.6], &[1, 1])).is_err());
    }

    #[test]
    fn threshold_examples() {
        let m = threshold_metrics(&scored(&[0.6, 0.4, 0.7, 0.2], &[1, 1, 0, 0]), 0.5).unwrap();
        assert_eq!((m.sen, m.spe, m.acc), (0.5, 0.5, 0.5));
        let m = threshold_metrics(&scored(&[0.5, 0.49], &[1, 0]), 0.5).unwrap();
        assert_eq!((m.sen, m.spe, m.acc), (1.0, 1.0, 1.0));
        let m = threshold_metrics(&scored(&[0.1, 0.2, 0.3], &[1, 1, 0]), 0.5).unwrap();
        assert_eq!(m.sen, 0.0);
        assert!(threshold_metrics(&[], 0.5).is_err());
    }

    #[test]
    fn ed_examples() {
        let r = |side, pred: (f64, f64), gt: (f64, f64)| LocalizationResult {
            image_id: "a".into(),
            side,
            pred: Point2D::new(pred.0, pred.1),
            gt: Point2D::new(gt.0, gt.1),
        };
        let s = ed_error(&[r(Side::Left, (0.0, 0.0), (3.0, 4.0)), r(Side::Right, (1.0, 1.0), (1.0, 1.0))]).unwrap();
        assert_eq!((s.left, s.right, s.avg), (5.0, 0.0, 2.5));
        assert!(ed_error(&[r(Side::Left, (0.0, 0.0), (0.0, 0.0))]).is_err());
    }

    #[test]
    fn roc_curve_endpoints() {
        let c = roc_curve(&scored(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1])).unwrap();
        assert_eq!(c.first(), Some(&(0.0, 0.0)));
        assert_eq!(c.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn image_level_takes_max() {
        let mut s = scored(&[0.2, 0.7], &[1, 1]);
        s[1].image_id = "i0".into();
        s[1].side = Side::Right;
        let img = image_level(&s);
        assert_eq!(img.len(), 1);
        assert_eq!(img[0].score, 0.7);
    }
}
