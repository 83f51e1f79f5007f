use std::collections::BTreeMap;
use std::time::Instant;

use log::{debug, warn};
use thiserror::Error;

use crate::eval::{Trajectory, TrajectoryFormat};
use crate::filter::{
    adaptive_ground_threshold, filter_frame_with, ransac_ground_plane_with, FilterError,
    FrameContext, FrameFilterResult, PointObservation, RansacParams, Track, VoteState,
};
use crate::geometry::{horizon_line, CameraIntrinsics, HorizonLine, Plane, Pose, Vec2, Vec3};
use crate::masks::{build_segmask, DetectionRecord, MaskError, MaskParams, SegMask};
use crate::par::Exec;
use crate::pose::{
    keyframe_decision, refine_pose, Correspondence, PoseError, RefineOptions, RobustKernel,
};

use super::{
    overlapped_time, total_time, ConfigError, PipelineConfig, QualityController, QualityTier,
    StageTiming,
};

/// Tracks unseen for this many frames are forgotten.
const TRACK_TTL: i64 = 30;

pub const TIMING_CSV_HEADER: &str =
    "frame,t_transfer,t_compute,t_sync,t_slam,t_inference,t_overlapped,tier";

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("frame {frame}: {source}")]
    Filter {
        frame: i64,
        #[source]
        source: FilterError,
    },
    #[error("frame {frame}: {source}")]
    Mask {
        frame: i64,
        #[source]
        source: MaskError,
    },
    #[error("frame {frame} does not follow frame {last}; frames must be in increasing order")]
    OutOfOrder { frame: i64, last: i64 },
}

/// One frame of input.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameInput {
    pub frame_id: i64,
    /// Seconds; `frame_id · frame_period` when absent.
    pub timestamp: Option<f64>,
    /// `None` when the frame's points could not be read; the frame is skipped.
    pub points: Option<Vec<PointObservation>>,
    /// `None` when no detections exist for the frame; an empty mask is used.
    pub detections: Option<Vec<DetectionRecord>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput {
    pub frame_id: i64,
    pub timestamp: f64,
    pub points: Vec<PointObservation>,
    pub filter: FrameFilterResult,
    /// World-to-camera. The first processed frame defines the world.
    pub pose: Pose,
    pub keyframe: bool,
    /// Ground plane in camera coordinates, when one passed the tilt check.
    pub plane: Option<Plane>,
    pub n_matches: usize,
    pub n_filtered: usize,
    pub tier: QualityTier,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedFrame {
    pub frame_id: i64,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingRecord {
    pub frame_id: i64,
    pub timing: StageTiming,
    pub t_overlapped: f64,
    pub tier: QualityTier,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineOutput {
    pub frames: Vec<FrameOutput>,
    pub skipped: Vec<SkippedFrame>,
    pub timings: Vec<TimingRecord>,
}

impl PipelineOutput {
    /// Camera-to-world poses of the processed frames, stamped with their times.
    pub fn trajectory(&self) -> Trajectory {
        let poses = self
            .frames
            .iter()
            .map(|f| f.pose.inverse().with_timestamp(Some(f.timestamp)))
            .collect();
        Trajectory::new(poses, TrajectoryFormat::Kitti)
    }
}

pub fn format_timing_csv(rows: &[TimingRecord]) -> String {
    let mut s = String::from(TIMING_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let t = &r.timing;
        s.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{}\n",
            r.frame_id,
            t.t_transfer,
            t.t_compute,
            t.t_sync,
            t.t_slam,
            t.t_inference,
            r.t_overlapped,
            r.tier
        ));
    }
    s
}

struct MaskJob {
    seg: SegMask,
    warning: Option<String>,
    seconds: f64,
}

fn build_mask(
    input: &FrameInput,
    cfg: &PipelineConfig,
    divisor: u32,
) -> Result<MaskJob, RuntimeError> {
    let start = Instant::now();
    let k = &cfg.camera;
    let (seg, warning) = match &input.detections {
        Some(dets) => {
            let params = MaskParams {
                scale_divisor: divisor,
                ..cfg.mask.clone()
            };
            let seg =
                build_segmask(dets, &cfg.policy, &params, k.width, k.height).map_err(|source| {
                    RuntimeError::Mask {
                        frame: input.frame_id,
                        source,
                    }
                })?;
            (seg, None)
        }
        None => (
            SegMask::empty(k.width, k.height),
            Some(format!(
                "frame {}: no detections, using an empty mask",
                input.frame_id
            )),
        ),
    };
    Ok(MaskJob {
        seg,
        warning,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn project(k: &CameraIntrinsics, x: &Vec3) -> Vec2 {
    Vec2::new(k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy)
}

/// Predicted pixel of a point last seen as `last` in a camera with pose
/// `from`, now seen by a camera with pose `to`. Points without depth are
/// treated as infinitely far, so only the rotation moves them.
/// Depth cues of a past frame for points observed without 3D.
#[derive(Clone, Copy, Debug)]
struct DepthPrior {
    plane: Option<Plane>,
    /// Deepest measured point; depth-less points lie at least this far.
    range: f64,
}

impl DepthPrior {
    fn from_frame(points: &[PointObservation], plane: Option<Plane>) -> Self {
        let range = points
            .iter()
            .filter_map(|p| p.point3d.map(|x| x.z))
            .fold(0.0, f64::max);
        Self { plane, range }
    }

    /// Depth along the normalized ray `(x, y, 1)`: the ground hit when it
    /// lies beyond the measured range, else the range itself.
    fn depth(&self, ray: &Vec3) -> Option<f64> {
        let ground = self.plane.and_then(|pl| {
            let denom = pl.normal().dot(ray);
            (denom.abs() > 1e-12)
                .then(|| -pl.d / denom)
                .filter(|t| *t > 0.0)
        });
        let depth = ground.map_or(self.range, |t| t.max(self.range));
        (depth > 0.0).then_some(depth)
    }
}

/// Where the point seen in `last` should appear under pose `to`, if static.
/// Points without 3D are placed using `prior`, or at infinity without one.
fn predict_pixel(
    k: &CameraIntrinsics,
    last: &PointObservation,
    prior: Option<&DepthPrior>,
    from: &Pose,
    to: &Pose,
) -> Vec2 {
    let rel = to.compose(&from.inverse());
    let ray = Vec3::new(
        (last.pixel.x - k.cx) / k.fx,
        (last.pixel.y - k.cy) / k.fy,
        1.0,
    );
    let x = last
        .point3d
        .or_else(|| prior.and_then(|pr| pr.depth(&ray)).map(|z| ray * z));
    if let Some(x) = x {
        let xc = rel.transform_point(&x);
        if xc.z > 1e-6 {
            return project(k, &xc);
        }
        return last.pixel;
    }
    let r = rel.rotation * ray;
    if r.z > 1e-6 {
        project(k, &r)
    } else {
        last.pixel
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct LastKeyframe {
    time: f64,
    pixels: BTreeMap<i64, Vec2>,
}

/// Mutable tracking state carried between frames.
struct Tracker<'c> {
    cfg: &'c PipelineConfig,
    exec: Exec,
    tracks: BTreeMap<i64, Track>,
    votes: VoteState,
    last_obs: BTreeMap<i64, PointObservation>,
    /// World position of each mapped track.
    map: BTreeMap<i64, Vec3>,
    /// Estimated world-to-camera poses by frame.
    poses: BTreeMap<i64, Pose>,
    priors: BTreeMap<i64, DepthPrior>,
    history: Vec<i64>,
    last_kf: Option<LastKeyframe>,
    height: f64,
    force_keyframe: bool,
}

struct Tracked {
    output: FrameOutput,
    timing: StageTiming,
}

impl<'c> Tracker<'c> {
    fn new(cfg: &'c PipelineConfig, exec: Exec) -> Self {
        Self {
            cfg,
            exec,
            tracks: BTreeMap::new(),
            votes: VoteState::new(),
            last_obs: BTreeMap::new(),
            map: BTreeMap::new(),
            poses: BTreeMap::new(),
            priors: BTreeMap::new(),
            history: Vec::new(),
            last_kf: None,
            height: cfg.ground_height_prior,
            force_keyframe: true,
        }
    }

    fn refine_opts(&self) -> RefineOptions {
        RefineOptions {
            kernel: RobustKernel::huber(self.cfg.huber_delta),
            max_iters: self.cfg.pose_max_iters,
            ..RefineOptions::default()
        }
    }

    /// Constant-velocity extrapolation of the last two poses.
    fn predict(&self) -> Pose {
        match self.history.as_slice() {
            [] => Pose::identity(),
            [only] => self.poses[only],
            // Extrapolate only across consecutive frames; after a gap, hold.
            [.., a, b] if b - a == 1 => {
                let (pa, pb) = (self.poses[a], self.poses[b]);
                pb.compose(&pa.inverse()).compose(&pb)
            }
            [.., b] => self.poses[b],
        }
    }

    fn correspondences(&self, points: &[PointObservation]) -> Vec<(usize, Correspondence)> {
        points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                self.map
                    .get(&p.track_id)
                    .map(|x| (i, Correspondence::new(*x, p.pixel, 1.0)))
            })
            .collect()
    }

    fn ground_plane(
        &mut self,
        frame_id: i64,
        points: &[PointObservation],
        iters: usize,
    ) -> Option<Plane> {
        let cloud: Vec<Vec3> = points.iter().filter_map(|p| p.point3d).collect();
        if cloud.len() < 3 {
            return None;
        }
        let cfg = self.cfg;
        let tau = adaptive_ground_threshold(
            self.height,
            cfg.ransac_alpha,
            cfg.ransac_tau_min,
            cfg.ransac_tau_max,
        );
        let params = RansacParams::new(
            iters,
            tau,
            splitmix64(cfg.ransac_seed ^ splitmix64(frame_id as u64)),
        );
        let fit = ransac_ground_plane_with(&cloud, &params, self.exec).ok()?;
        // The camera's down axis is +y; walls and box faces fail this check.
        let tilt = fit
            .plane
            .normal()
            .dot(&Vec3::new(0.0, 1.0, 0.0))
            .abs()
            .min(1.0)
            .acos();
        if tilt.to_degrees() > cfg.max_tilt_deg {
            return None;
        }
        self.height = fit.plane.d.abs();
        Some(fit.plane)
    }

    fn track(
        &mut self,
        input: &FrameInput,
        points: Vec<PointObservation>,
        seg: &SegMask,
        tier: QualityTier,
    ) -> Result<Tracked, RuntimeError> {
        let cfg = self.cfg;
        let k = &cfg.camera;
        let frame_id = input.frame_id;
        let fail = |source| RuntimeError::Filter {
            frame: frame_id,
            source,
        };
        let timestamp = input
            .timestamp
            .unwrap_or(frame_id as f64 * cfg.frame_period);
        let mut weights = cfg.weights.clone();
        let mut ransac_iters = cfg.ransac_iters;
        if tier != QualityTier::High {
            let p = tier.params();
            weights.vote_window = p.vote_window;
            ransac_iters = p.ransac_iters;
        }
        let mut warnings = Vec::new();
        let slam_start = Instant::now();

        // Staging: pose prior, ego-compensated track motion, ground plane.
        let t0 = Instant::now();
        if let Some(p) = points.iter().find(|p| p.frame_id != frame_id) {
            return Err(fail(FilterError::FrameMismatch {
                track_id: p.track_id,
                expected: frame_id,
                got: p.frame_id,
            }));
        }
        let predicted = self.predict();
        let corr = self.correspondences(&points);
        let plain: Vec<Correspondence> = corr.iter().map(|(_, c)| *c).collect();
        let provisional = match refine_pose(&predicted, &plain, k, &self.refine_opts(), self.exec) {
            Ok(est) => est.pose,
            Err(PoseError::NoConvergence { best, .. }) => *best,
            Err(_) => predicted,
        };
        for p in &points {
            let track = self
                .tracks
                .entry(p.track_id)
                .or_insert_with(|| Track::new(p.track_id));
            let displacement = self.last_obs.get(&p.track_id).and_then(|last| {
                let prior = self.priors.get(&last.frame_id);
                self.poses
                    .get(&last.frame_id)
                    .map(|from| p.pixel - predict_pixel(k, last, prior, from, &provisional))
            });
            match displacement {
                Some(d) => track
                    .push_with_displacement(frame_id, p.pixel, d)
                    .map_err(fail)?,
                None => {
                    *track = Track::new(p.track_id);
                    track.push(frame_id, p.pixel).map_err(fail)?;
                }
            }
            track.truncate_front(weights.motion_window + 1);
        }
        let plane = self.ground_plane(frame_id, &points, ransac_iters);
        let horizon: Option<HorizonLine> = plane
            .as_ref()
            .and_then(|pl| horizon_line(k, &pl.normal_towards_plane()).ok().flatten());
        let t_transfer = t0.elapsed().as_secs_f64();

        // Filtering. Its result is complete before the pose is refined.
        let t1 = Instant::now();
        let ctx = FrameContext {
            points: &points,
            seg,
            tracks: &self.tracks,
            plane: plane.as_ref(),
            horizon: horizon.as_ref(),
            votes: &self.votes,
            policy: &cfg.policy,
            weights: &weights,
        };
        let filter = filter_frame_with(&ctx, self.exec).map_err(fail)?;
        let t_compute = t1.elapsed().as_secs_f64();

        // Barrier: merge the frame's evidence and weight the correspondences.
        let t2 = Instant::now();
        for (p, e) in points.iter().zip(&filter.evidence) {
            self.votes.record(p.track_id, *e, weights.vote_window);
        }
        let use_filter = cfg.filter_enabled;
        let weighted: Vec<Correspondence> = corr
            .iter()
            .map(|(i, c)| {
                if use_filter {
                    Correspondence {
                        info_weight: filter.scores[*i].staticness,
                        filtered: filter.outlier[*i],
                        ..*c
                    }
                } else {
                    *c
                }
            })
            .collect();
        let t_sync = t2.elapsed().as_secs_f64();

        let pose = if use_filter {
            match refine_pose(&provisional, &weighted, k, &self.refine_opts(), self.exec) {
                Ok(est) => est.pose,
                Err(PoseError::NoConvergence { best, .. }) => *best,
                Err(e) if self.history.is_empty() => {
                    debug!("frame {frame_id}: no map yet, pose kept: {e}");
                    provisional
                }
                Err(e) => {
                    warnings.push(format!(
                        "frame {frame_id}: pose kept at the provisional estimate: {e}"
                    ));
                    provisional
                }
            }
        } else {
            provisional
        };
        if plain.len() < 3 && !self.history.is_empty() {
            warnings.push(format!(
                "frame {frame_id}: only {} mapped points, pose extrapolated",
                plain.len()
            ));
            self.force_keyframe = true;
        }

        // Map management and keyframe gate.
        let n_filtered = if use_filter {
            filter.outlier.iter().filter(|o| **o).count()
        } else {
            0
        };
        let n_matches = weighted.iter().filter(|c| !c.filtered).count();
        let dt = self
            .last_kf
            .as_ref()
            .map_or(f64::INFINITY, |kf| timestamp - kf.time);
        let q_motion = self.last_kf.as_ref().map_or(0.0, |kf| {
            median(
                points
                    .iter()
                    .filter_map(|p| kf.pixels.get(&p.track_id).map(|q| (p.pixel - q).norm()))
                    .collect(),
            )
        });
        let keyframe = self.force_keyframe
            || keyframe_decision(n_matches, n_filtered, dt, q_motion, &cfg.keyframe);
        self.force_keyframe = false;
        if use_filter {
            for (p, o) in points.iter().zip(&filter.outlier) {
                if *o {
                    self.map.remove(&p.track_id);
                }
            }
        }
        if keyframe {
            let to_world = pose.inverse();
            for (i, p) in points.iter().enumerate() {
                if use_filter && filter.outlier[i] {
                    continue;
                }
                if let Some(x) = p.point3d {
                    self.map
                        .entry(p.track_id)
                        .or_insert_with(|| to_world.transform_point(&x));
                }
            }
            self.last_kf = Some(LastKeyframe {
                time: timestamp,
                pixels: points.iter().map(|p| (p.track_id, p.pixel)).collect(),
            });
        }

        for p in &points {
            self.last_obs.insert(p.track_id, *p);
        }
        self.poses.insert(frame_id, pose);
        self.priors
            .insert(frame_id, DepthPrior::from_frame(&points, plane));
        self.history.push(frame_id);
        let horizon_frame = frame_id - TRACK_TTL;
        let stale: Vec<i64> = self
            .last_obs
            .iter()
            .filter(|(_, o)| o.frame_id < horizon_frame)
            .map(|(t, _)| *t)
            .collect();
        for t in &stale {
            self.last_obs.remove(t);
            self.tracks.remove(t);
            self.map.remove(t);
        }
        self.votes.retain(|t| self.last_obs.contains_key(&t));
        self.poses.retain(|f, _| *f >= horizon_frame);
        self.priors.retain(|f, _| *f >= horizon_frame);
        self.history.retain(|f| *f >= horizon_frame);

        let t_slam = slam_start.elapsed().as_secs_f64();
        Ok(Tracked {
            output: FrameOutput {
                frame_id,
                timestamp,
                points,
                filter,
                pose: pose.with_timestamp(Some(timestamp)),
                keyframe,
                plane,
                n_matches,
                n_filtered,
                tier,
                warnings,
            },
            timing: StageTiming {
                t_transfer,
                t_compute,
                t_sync,
                t_slam,
                t_inference: 0.0,
            },
        })
    }
}

/// Runs the frame pipeline over `frames`, which must have strictly increasing ids.
///
/// With `cfg.overlapped` the mask of frame `t + 1` is built while frame `t`
/// is tracked. Both masks and tracking use the quality tier decided before
/// frame `t`, so the schedule never changes what is computed.
pub fn run_pipeline(
    frames: &[FrameInput],
    cfg: &PipelineConfig,
    exec: Exec,
) -> Result<PipelineOutput, RuntimeError> {
    cfg.validate()?;
    for w in frames.windows(2) {
        if w[1].frame_id <= w[0].frame_id {
            return Err(RuntimeError::OutOfOrder {
                frame: w[1].frame_id,
                last: w[0].frame_id,
            });
        }
    }
    let mut out = PipelineOutput::default();
    let mut tracker = Tracker::new(cfg, exec);
    let mut quality = QualityController::new(QualityTier::High, cfg.hysteresis_frames);
    let divisor = |tier: QualityTier| {
        if tier == QualityTier::High {
            cfg.mask.scale_divisor
        } else {
            tier.params().mask_divisor
        }
    };

    let mut pending = match frames.first() {
        Some(f) => Some(build_mask(f, cfg, divisor(quality.tier))?),
        None => None,
    };
    for (i, input) in frames.iter().enumerate() {
        let tier = quality.tier;
        let mask = pending.take().expect("mask prepared for every frame");
        let next = frames.get(i + 1);
        let job = |points: Vec<PointObservation>, tracker: &mut Tracker| {
            tracker.track(input, points, &mask.seg, tier)
        };
        let prepare = || next.map(|f| build_mask(f, cfg, divisor(tier))).transpose();

        let Some(points) = input.points.clone() else {
            out.skipped.push(SkippedFrame {
                frame_id: input.frame_id,
                reason: "points missing".into(),
            });
            warn!("frame {}: points missing, frame skipped", input.frame_id);
            pending = prepare()?;
            continue;
        };
        let (tracked, next_mask) = if cfg.overlapped {
            exec.join(|| job(points, &mut tracker), prepare)
        } else {
            let tracked = job(points, &mut tracker);
            (tracked, prepare())
        };
        let mut tracked = tracked?;
        pending = next_mask?;

        if let Some(w) = &mask.warning {
            warn!("{w}");
            tracked.output.warnings.insert(0, w.clone());
        }
        for w in tracked
            .output
            .warnings
            .iter()
            .skip(usize::from(mask.warning.is_some()))
        {
            warn!("{w}");
        }
        let mut timing = tracked.timing;
        timing.t_inference = mask.seconds;
        let t_overlapped = overlapped_time(timing.t_slam, timing.t_inference, timing.t_sync);
        let critical = if cfg.overlapped {
            t_overlapped
        } else {
            timing.t_slam + timing.t_inference
        };
        debug_assert!(total_time(&timing) <= timing.t_slam + 1e-3);
        if cfg.adaptive_quality {
            quality.update(cfg.frame_period - critical, cfg.effective_t_threshold());
        }
        out.timings.push(TimingRecord {
            frame_id: input.frame_id,
            timing,
            t_overlapped,
            tier,
        });
        out.frames.push(tracked.output);
    }
    Ok(out)
}
