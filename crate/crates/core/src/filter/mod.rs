//! Multi-stage classification of tracked points as static or outlier.
//!
//! Per-point scores combine four "badness" cues (semantic mask, temporal
//! motion, ground proximity, image-border proximity) into a staticness value;
//! points below the threshold are outliers. Cluster expansion, sky rejection,
//! fast-class bypass and temporal voting can add further outliers. Everything
//! in [`filter_frame`] is a deterministic function of its inputs.

mod cluster;
mod flow;
mod frame;
mod ransac;
mod score;
mod temporal;

pub use cluster::cluster_expand;
pub use flow::{block_match_displacement, BlockMatch, GrayImage};
pub use frame::{filter_frame, filter_frame_with, FrameContext, FrameFilterResult, OutlierReasons};
pub use ransac::{
    adaptive_ground_threshold, ransac_ground_plane, ransac_ground_plane_with, RansacParams,
    RansacResult,
};
pub use score::{bilinear_sample, edge_score, score_point, sky_test, ScoreBreakdown};
pub use temporal::{temporal_motion, temporal_vote, Track, VoteState};

use crate::geometry::{Vec2, Vec3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid filter parameters: {0}")]
    InvalidParams(String),
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("no plane found: every sampled triple was degenerate")]
    NoPlane,
    #[error("track {track_id}: frame {frame} does not follow frame {last}")]
    NonIncreasingFrame {
        track_id: i64,
        frame: i64,
        last: i64,
    },
    #[error("point with track {track_id} belongs to frame {got}, expected {expected}")]
    FrameMismatch {
        track_id: i64,
        expected: i64,
        got: i64,
    },
}

/// One tracked keypoint in one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointObservation {
    pub track_id: i64,
    pub frame_id: i64,
    /// Sub-pixel image position.
    pub pixel: Vec2,
    /// Camera-frame position in meters, when depth is known.
    pub point3d: Option<Vec3>,
}

/// Scoring weights and thresholds of the multi-stage filter.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterWeights {
    /// Weights of the segmentation, motion, ground and edge cues; sum to 1.
    pub w: [f64; 4],
    /// Points with staticness strictly below this are outliers.
    pub theta: f64,
    /// Motion (pixels/frame) that saturates the motion cue.
    pub v_max: f64,
    /// Ground distance (meters) at which the ground cue reaches zero.
    pub tau_ground: f64,
    /// Border distance (pixels) at or below which the edge cue is 1.
    pub edge_inner: f64,
    /// Border distance (pixels) at or beyond which the edge cue is 0.
    pub edge_outer: f64,
    pub cluster_radius: f64,
    pub cluster_min_k: usize,
    pub cluster_margin: f64,
    /// Frames averaged by the motion cue.
    pub motion_window: usize,
    pub vote_window: usize,
    pub vote_quota: f64,
    /// Fast-dynamic classes are removed immediately at or above this mask value.
    pub fast_bypass: f64,
}

impl Default for FilterWeights {
    fn default() -> Self {
        Self {
            w: [0.5, 0.2, 0.2, 0.1],
            theta: 0.5,
            v_max: 4.0,
            tau_ground: 0.05,
            edge_inner: 10.0,
            edge_outer: 40.0,
            cluster_radius: 15.0,
            cluster_min_k: 3,
            cluster_margin: 0.15,
            motion_window: 5,
            vote_window: 5,
            vote_quota: 0.6,
            fast_bypass: 0.5,
        }
    }
}

impl FilterWeights {
    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |m: String| Err(FilterError::InvalidParams(m));
        if self.w.iter().any(|w| !(*w >= 0.0)) {
            return bad(format!("weights must be non-negative, got {:?}", self.w));
        }
        let sum: f64 = self.w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("weights must sum to 1, got {sum}"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if !(self.v_max > 0.0 && self.tau_ground > 0.0) {
            return bad("v_max and tau_ground must be positive".into());
        }
        if !(self.edge_inner < self.edge_outer) {
            return bad(format!(
                "edge margins must satisfy m0 < m1, got {} and {}",
                self.edge_inner, self.edge_outer
            ));
        }
        if !(self.cluster_radius > 0.0) || self.cluster_min_k == 0 {
            return bad("cluster radius must be positive and min_k at least 1".into());
        }
        if !(self.cluster_margin >= 0.0 && self.cluster_margin <= 1.0) {
            return bad(format!(
                "cluster margin must lie in [0, 1], got {}",
                self.cluster_margin
            ));
        }
        if self.vote_window == 0 || self.motion_window == 0 {
            return bad("vote and motion windows must be at least 1 frame".into());
        }
        if !(self.vote_quota > 0.0 && self.vote_quota <= 1.0) {
            return bad(format!(
                "vote quota must lie in (0, 1], got {}",
                self.vote_quota
            ));
        }
        Ok(())
    }
}
