//! Trajectory and filter evaluation.
//!
//! Absolute pose error after Umeyama alignment, relative pose error over an
//! index gap, summary statistics, confusion-matrix scores for the point filter
//! and baseline-versus-ours improvement percentages. Undefined ratios are
//! `None`, never zero.

mod align;
mod trajectory;

pub use align::{ape, associate, rpe, umeyama_align, umeyama_points};
pub use trajectory::{
    format_trajectory, parse_stats_csv, parse_trajectory, read_stats_csv, read_trajectory,
    write_confusion_csv, write_error_csv, write_improvement_csv, write_stats_csv, write_trajectory,
    Trajectory, TrajectoryFormat,
};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),
    #[error("no associated poses")]
    EmptyAssociation,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("delta {delta} invalid for a trajectory of length {len}")]
    InvalidDelta { delta: usize, len: usize },
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Validation {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Max, median, min and RMSE of an error sequence, in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorStats {
    pub max: f64,
    pub median: f64,
    pub min: f64,
    pub rmse: f64,
}

impl ErrorStats {
    pub fn fields(&self) -> [(&'static str, f64); 4] {
        [
            ("max", self.max),
            ("median", self.median),
            ("min", self.min),
            ("rmse", self.rmse),
        ]
    }
}

pub fn stats(errors: &[f64]) -> Result<ErrorStats, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty("error list"));
    }
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    let rmse = (s.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    Ok(ErrorStats {
        max: s[n - 1],
        median,
        min: s[0],
        rmse,
    })
}

/// Confusion counts with dynamic as the positive class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfusionReport {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Self {
            tp,
            fp,
            fn_,
            tn,
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            precision,
            recall,
            f1,
        }
    }
}

pub fn confusion(pred_dynamic: &[bool], gt_dynamic: &[bool]) -> Result<ConfusionReport, EvalError> {
    if pred_dynamic.len() != gt_dynamic.len() {
        return Err(EvalError::LengthMismatch {
            left: pred_dynamic.len(),
            right: gt_dynamic.len(),
        });
    }
    if pred_dynamic.is_empty() {
        return Err(EvalError::Empty("label list"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, g) in pred_dynamic.iter().zip(gt_dynamic) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(ConfusionReport::from_counts(tp, fp, fn_, tn))
}

/// Percent change per statistic; positive is an improvement, negative a
/// degradation, `None` where the baseline is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImprovementReport {
    pub max: Option<f64>,
    pub median: Option<f64>,
    pub min: Option<f64>,
    pub rmse: Option<f64>,
}

impl ImprovementReport {
    pub fn fields(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("max", self.max),
            ("median", self.median),
            ("min", self.min),
            ("rmse", self.rmse),
        ]
    }
}

/// `100·(baseline − ours)/baseline`.
pub fn improvement_percent(baseline: f64, ours: f64) -> Option<f64> {
    (baseline != 0.0 && baseline.is_finite()).then(|| 100.0 * (baseline - ours) / baseline)
}

pub fn improvement_report(baseline: &ErrorStats, ours: &ErrorStats) -> ImprovementReport {
    ImprovementReport {
        max: improvement_percent(baseline.max, ours.max),
        median: improvement_percent(baseline.median, ours.median),
        min: improvement_percent(baseline.min, ours.min),
        rmse: improvement_percent(baseline.rmse, ours.rmse),
    }
}
