use std::collections::BTreeMap;

use crate::geometry::{HorizonLine, Plane};
use crate::masks::{Category, ClassPolicy, SegMask};
use crate::par::Exec;

use super::{
    cluster_expand, score_point, sky_test, temporal_vote, FilterError, FilterWeights,
    PointObservation, ScoreBreakdown, Track, VoteState,
};

/// Everything the filter reads for one frame. All references are immutable
/// snapshots; the caller updates tracks and vote state afterwards.
#[derive(Clone, Copy, Debug)]
pub struct FrameContext<'a> {
    pub points: &'a [PointObservation],
    pub seg: &'a SegMask,
    pub tracks: &'a BTreeMap<i64, Track>,
    /// Ground plane in camera coordinates.
    pub plane: Option<&'a Plane>,
    pub horizon: Option<&'a HorizonLine>,
    pub votes: &'a VoteState,
    pub policy: &'a ClassPolicy,
    pub weights: &'a FilterWeights,
}

/// Which stages flagged each point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutlierReasons {
    pub threshold: Vec<bool>,
    pub fast_class: Vec<bool>,
    pub cluster: Vec<bool>,
    pub sky: Vec<bool>,
    pub vote: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameFilterResult {
    pub scores: Vec<ScoreBreakdown>,
    /// Final per-point decision, the union of all stages.
    pub outlier: Vec<bool>,
    pub reasons: OutlierReasons,
    /// This frame's dynamic evidence per point, to be recorded into the vote state.
    pub evidence: Vec<bool>,
}

pub fn filter_frame(ctx: &FrameContext<'_>) -> Result<FrameFilterResult, FilterError> {
    filter_frame_with(ctx, Exec::default())
}

/// Runs scoring, fast-class bypass, cluster expansion, sky rejection and
/// temporal voting, in that order, and returns their union.
///
/// Each stage is a per-point function of the frame snapshot (cluster expansion
/// reads the complete threshold stage first), so the result is independent of
/// point order and of the execution policy.
pub fn filter_frame_with(
    ctx: &FrameContext<'_>,
    exec: Exec,
) -> Result<FrameFilterResult, FilterError> {
    let w = ctx.weights;
    w.validate()?;
    let pts = ctx.points;
    if let Some(first) = pts.first() {
        if let Some(bad) = pts.iter().find(|p| p.frame_id != first.frame_id) {
            return Err(FilterError::FrameMismatch {
                track_id: bad.track_id,
                expected: first.frame_id,
                got: bad.frame_id,
            });
        }
    }

    let scores: Vec<ScoreBreakdown> = exec.map(pts, |p| {
        score_point(p, ctx.seg, ctx.tracks.get(&p.track_id), ctx.plane, w)
    });
    let threshold: Vec<bool> = scores.iter().map(|s| s.outlier).collect();

    let fast_class: Vec<bool> = exec.map_range(pts.len(), |i| {
        let p = &pts[i];
        let class = ctx.seg.class_map[ctx.seg.nearest(p.pixel.x, p.pixel.y)];
        class != 0
            && ctx.policy.category_of(class) == Category::FastDynamic
            && scores[i].s_seg >= w.fast_bypass
    });

    let pixels: Vec<_> = pts.iter().map(|p| p.pixel).collect();
    let staticness: Vec<f64> = scores.iter().map(|s| s.staticness).collect();
    let expanded = cluster_expand(
        &pixels,
        &threshold,
        &staticness,
        w.cluster_radius,
        w.cluster_min_k,
        w.theta,
        w.cluster_margin,
        exec,
    );
    let cluster: Vec<bool> = expanded
        .iter()
        .zip(&threshold)
        .map(|(e, t)| *e && !*t)
        .collect();

    let sky: Vec<bool> = exec.map(pts, |p| {
        sky_test(
            p.pixel.x,
            p.pixel.y,
            p.point3d.is_some(),
            ctx.seg,
            ctx.horizon,
        )
    });

    let evidence: Vec<bool> = scores
        .iter()
        .map(|s| s.s_motion > 0.5 || s.s_seg > 0.7)
        .collect();
    let vote: Vec<bool> = exec.map_range(pts.len(), |i| {
        let history = ctx
            .votes
            .with_current(pts[i].track_id, evidence[i], w.vote_window);
        temporal_vote(&history, w.vote_window, w.vote_quota)
    });

    let outlier = (0..pts.len())
        .map(|i| threshold[i] || fast_class[i] || cluster[i] || sky[i] || vote[i])
        .collect();
    Ok(FrameFilterResult {
        scores,
        outlier,
        reasons: OutlierReasons {
            threshold,
            fast_class,
            cluster,
            sky,
            vote,
        },
        evidence,
    })
}
