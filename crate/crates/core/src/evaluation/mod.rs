//! Classification and localization metrics, report tables and plots.

mod metrics;
pub mod plots;
mod report;

pub use metrics::{
    ed_error, image_level, mean_error, roc_auc, roc_curve, threshold_metrics, EdSummary, LocalizationResult,
    ScoredSample, ThresholdMetrics, DEFAULT_THRESHOLD,
};
pub use report::{fmt2, round2, AblationRow, ClassificationRow, EvalReport, LocalizationRow, ROUNDING_NOTE};
