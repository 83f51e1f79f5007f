//! Frame-pipeline orchestration, stage timing and adaptive quality control.
//!
//! [`run_pipeline`] drives masks → filtering → pose refinement → keyframe
//! gating frame by frame. Mask construction for the next frame may overlap
//! the tracking work of the current one; the filter result of a frame is
//! always complete before that frame's pose is refined. With adaptive quality
//! off (the default) every artifact is independent of scheduling and worker
//! count. Timing logs are the one exception and are never compared.

mod config;
mod pipeline;

use std::fmt;
use std::str::FromStr;

pub use config::{ConfigError, PipelineConfig};
pub use pipeline::{
    format_timing_csv, run_pipeline, FrameInput, FrameOutput, PipelineOutput, RuntimeError,
    SkippedFrame, TimingRecord, TIMING_CSV_HEADER,
};

/// Per-frame stage durations in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTiming {
    pub t_transfer: f64,
    pub t_compute: f64,
    pub t_sync: f64,
    pub t_slam: f64,
    pub t_inference: f64,
}

/// Serial frame time: transfer, compute and synchronization added up.
pub fn total_time(t: &StageTiming) -> f64 {
    t.t_transfer + t.t_compute + t.t_sync
}

/// Frame time when tracking and inference run side by side.
pub fn overlapped_time(t_slam: f64, t_inference: f64, t_sync: f64) -> f64 {
    t_slam.max(t_inference) + t_sync
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QualityTier {
    Low,
    Medium,
    High,
}

/// Work budget bound to a tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TierParams {
    pub ransac_iters: usize,
    /// Masks are processed at `1 / mask_divisor` resolution.
    pub mask_divisor: u32,
    pub vote_window: usize,
}

impl QualityTier {
    pub fn params(self) -> TierParams {
        match self {
            QualityTier::High => TierParams {
                ransac_iters: 500,
                mask_divisor: 1,
                vote_window: 5,
            },
            QualityTier::Medium => TierParams {
                ransac_iters: 200,
                mask_divisor: 2,
                vote_window: 3,
            },
            QualityTier::Low => TierParams {
                ransac_iters: 100,
                mask_divisor: 4,
                vote_window: 2,
            },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QualityTier::High => "high",
            QualityTier::Medium => "medium",
            QualityTier::Low => "low",
        }
    }
}

impl fmt::Display for QualityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(QualityTier::High),
            "medium" => Ok(QualityTier::Medium),
            "low" => Ok(QualityTier::Low),
            other => Err(format!("unknown quality tier {other:?}")),
        }
    }
}

/// Tier the available time alone calls for. Both boundaries are strict:
/// exactly `t_threshold` is medium and exactly half of it is low.
pub fn raw_tier(t_available: f64, t_threshold: f64) -> QualityTier {
    if t_available > t_threshold {
        QualityTier::High
    } else if t_available > 0.5 * t_threshold {
        QualityTier::Medium
    } else {
        QualityTier::Low
    }
}

/// Consecutive frames that asked for a tier other than the current one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Streak {
    pub candidate: Option<QualityTier>,
    pub count: usize,
}

/// Debounced tier selection: the tier moves away from `prev` only once the
/// same raw tier has been requested `hysteresis_frames` frames in a row.
/// A value of 0 behaves like 1 (no debouncing).
pub fn select_quality(
    t_available: f64,
    t_threshold: f64,
    prev: QualityTier,
    hysteresis_frames: usize,
    streak: &mut Streak,
) -> QualityTier {
    let raw = raw_tier(t_available, t_threshold);
    if raw == prev {
        *streak = Streak::default();
        return prev;
    }
    if streak.candidate == Some(raw) {
        streak.count += 1;
    } else {
        *streak = Streak {
            candidate: Some(raw),
            count: 1,
        };
    }
    if streak.count >= hysteresis_frames.max(1) {
        *streak = Streak::default();
        raw
    } else {
        prev
    }
}

/// Stateful wrapper around [`select_quality`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QualityController {
    pub tier: QualityTier,
    pub hysteresis_frames: usize,
    streak: Streak,
}

impl QualityController {
    pub fn new(start: QualityTier, hysteresis_frames: usize) -> Self {
        Self {
            tier: start,
            hysteresis_frames,
            streak: Streak::default(),
        }
    }

    pub fn update(&mut self, t_available: f64, t_threshold: f64) -> QualityTier {
        self.tier = select_quality(
            t_available,
            t_threshold,
            self.tier,
            self.hysteresis_frames,
            &mut self.streak,
        );
        self.tier
    }
}
