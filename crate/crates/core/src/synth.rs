//! Synthetic driving scenes with exact ground truth.
//!
//! The world is z-up with the ground at `z = 0`. Static points lie on the
//! ground and on static boxes beside the road; dynamic points lie on boxes
//! that translate at constant velocity. A forward-looking camera (x right,
//! y down, z forward) drives along a straight or circular path. Every frame
//! carries the visible observations with labels, the rendered silhouettes of
//! the moving boxes and a degraded copy of that mask whose precision and
//! recall on the labeled points are tuned to configurable targets.
//!
//! Output is a pure function of the configuration: frames are generated
//! from per-frame generators and may run in parallel.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{write_trajectory, EvalError, Trajectory, TrajectoryFormat};
use crate::filter::PointObservation;
use crate::geometry::{CameraIntrinsics, Mat3, Pose, Vec2, Vec3};
use crate::io::{format_labels, format_points, frame_file_name, IoError, Labels};
use crate::masks::{
    dilate, write_detections_jsonl, write_pgm, BBox, DetectionMask, DetectionRecord, MaskError,
    SegMask,
};
use crate::par::Exec;

/// Points closer than this to the image plane are culled.
const NEAR: f64 = 0.1;
/// Side of the square cells on which mask corruption operates, in pixels.
const CELL: u32 = 6;
/// Spurious blobs are this much more likely within two cells of a true silhouette.
const NEAR_SILHOUETTE_BOOST: f64 = 4.0;
/// Class written into detections of moving boxes.
pub const VEHICLE_CLASS_ID: i32 = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("frame {frame}: no point is visible; widen the field of view or add points")]
    EmptyView { frame: i64 },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{}: {source}", path.display())]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraPath {
    Straight,
    /// Constant left turn with radius `arc_radius`.
    Arc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub frames: usize,
    pub frame_period: f64,
    /// Static points, split between the ground and the static boxes.
    pub n_static: usize,
    /// Points on moving boxes, split evenly between them.
    pub n_dynamic: usize,
    /// Lateral half-width of the populated ground strip, meters.
    pub ground_extent: f64,
    pub static_boxes: usize,
    pub dynamic_bodies: usize,
    /// Length, width and height of every moving box, meters.
    pub body_size: [f64; 3],
    /// Speed range of the moving boxes, m/s.
    pub body_speed: [f64; 2],
    pub path: CameraPath,
    pub camera_speed: f64,
    pub camera_height: f64,
    pub arc_radius: f64,
    pub camera: CameraIntrinsics,
    /// Standard deviation of the pixel noise.
    pub pixel_noise: f64,
    /// Depth beyond which points are reported without 3D.
    pub max_depth: f64,
    /// Mask precision on labeled points that the degraded mask aims for.
    pub precision_target: f64,
    pub recall_target: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            frames: 20,
            frame_period: 0.1,
            n_static: 1500,
            n_dynamic: 600,
            ground_extent: 15.0,
            static_boxes: 6,
            dynamic_bodies: 3,
            body_size: [4.0, 1.8, 1.5],
            body_speed: [4.0, 10.0],
            path: CameraPath::Straight,
            camera_speed: 8.0,
            camera_height: 1.65,
            arc_radius: 80.0,
            camera: CameraIntrinsics::default(),
            pixel_noise: 0.3,
            max_depth: 50.0,
            precision_target: 1.0,
            recall_target: 1.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        self.camera
            .validate()
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        for (name, t) in [
            ("precision_target", self.precision_target),
            ("recall_target", self.recall_target),
        ] {
            if !(t > 0.0 && t <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {t}"));
            }
        }
        if !(self.frame_period > 0.0) || !(self.camera_height > 0.0) || !(self.ground_extent > 0.0)
        {
            return bad("frame_period, camera_height and ground_extent must be positive".into());
        }
        if self.body_size.iter().any(|s| !(*s > 0.0)) {
            return bad(format!(
                "body sizes must be positive, got {:?}",
                self.body_size
            ));
        }
        if !(self.body_speed[0] > 0.0 && self.body_speed[0] <= self.body_speed[1]) {
            return bad(format!(
                "body speed range must be positive and ordered, got {:?}",
                self.body_speed
            ));
        }
        if !(self.camera_speed >= 0.0) || !(self.pixel_noise >= 0.0) || !(self.max_depth > 0.0) {
            return bad(
                "camera_speed and pixel_noise must be non-negative, max_depth positive".into(),
            );
        }
        if self.path == CameraPath::Arc && !(self.arc_radius > 0.0) {
            return bad("arc_radius must be positive".into());
        }
        if self.n_dynamic > 0 && self.dynamic_bodies == 0 {
            return bad("dynamic points need at least one dynamic body".into());
        }
        Ok(())
    }
}

/// Row-major binary image.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn at_pixel(&self, p: &Vec2) -> bool {
        let x = p.x.round().clamp(0.0, (self.width - 1) as f64) as usize;
        let y = p.y.round().clamp(0.0, (self.height - 1) as f64) as usize;
        self.bits[y * self.width as usize + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Mask with `confidence` and `class_id` on every set pixel.
    pub fn to_segmask(&self, class_id: i32, confidence: f32) -> SegMask {
        let mut m = SegMask::empty(self.width, self.height);
        for (i, _) in self.bits.iter().enumerate().filter(|(_, b)| **b) {
            m.dynamic_confidence[i] = confidence;
            m.class_map[i] = class_id;
        }
        m
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneFrame {
    pub frame_id: i64,
    pub timestamp: f64,
    /// Camera-to-world.
    pub gt_pose: Pose,
    /// Visible observations in ascending track order, with pixel noise.
    pub points: Vec<PointObservation>,
    /// Noise-free projections of the same points.
    pub clean_pixels: Vec<Vec2>,
    pub world_points: Vec<Vec3>,
    pub gt_dynamic: Vec<bool>,
    pub gt_mask: BinaryMask,
    pub corrupted_mask: BinaryMask,
    /// Connected components of the corrupted mask.
    pub detections: Vec<DetectionRecord>,
}

/// Degradation parameters found by the search and the resulting scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorruptionStats {
    pub erase_rate: f64,
    pub spurious_rate: f64,
    /// Mask precision over all labeled observations; `None` without positives.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub labeled_points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub frames: Vec<SceneFrame>,
    pub trajectory: Trajectory,
    pub corruption: CorruptionStats,
}

impl Scene {
    pub fn labels(&self) -> Labels {
        self.frames
            .iter()
            .flat_map(|f| {
                f.points
                    .iter()
                    .zip(&f.gt_dynamic)
                    .map(move |(p, d)| ((p.track_id, f.frame_id), *d))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    center: Vec3,
    half: Vec3,
    velocity: Vec3,
}

impl Aabb {
    fn center_at(&self, t: f64) -> Vec3 {
        self.center + self.velocity * t
    }

    fn corners_at(&self, t: f64) -> [Vec3; 8] {
        let c = self.center_at(t);
        let h = self.half;
        std::array::from_fn(|i| {
            let s = |bit: usize| if i >> bit & 1 == 1 { 1.0 } else { -1.0 };
            c + Vec3::new(s(0) * h.x, s(1) * h.y, s(2) * h.z)
        })
    }

    /// True when the open segment `a → b` passes through the box interior
    /// before reaching `b`.
    fn blocks(&self, t: f64, a: &Vec3, b: &Vec3) -> bool {
        let c = self.center_at(t);
        let d = b - a;
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..3 {
            let lo = c[k] - self.half[k];
            let hi = c[k] + self.half[k];
            if d[k].abs() < 1e-15 {
                if a[k] <= lo || a[k] >= hi {
                    return false;
                }
            } else {
                let (mut e, mut f) = ((lo - a[k]) / d[k], (hi - a[k]) / d[k]);
                if e > f {
                    std::mem::swap(&mut e, &mut f);
                }
                t0 = t0.max(e);
                t1 = t1.min(f);
            }
        }
        t0 < t1 && t1 > 1e-9 && t0 < 1.0 - 1e-9
    }
}

#[derive(Clone, Copy, Debug)]
enum Anchor {
    Fixed(Vec3),
    /// Offset from the center of dynamic body `body`.
    Body {
        body: usize,
        offset: Vec3,
    },
}

struct World {
    anchors: Vec<Anchor>,
    static_boxes: Vec<Aabb>,
    bodies: Vec<Aabb>,
}

impl World {
    fn position(&self, anchor: &Anchor, t: f64) -> Vec3 {
        match anchor {
            Anchor::Fixed(p) => *p,
            Anchor::Body { body, offset } => self.bodies[*body].center_at(t) + offset,
        }
    }

    fn occluded(&self, t: f64, eye: &Vec3, p: &Vec3) -> bool {
        self.static_boxes
            .iter()
            .chain(&self.bodies)
            .any(|b| b.blocks(t, eye, p))
    }
}

/// Position and heading of the path at arc length `s`.
fn path_frame(cfg: &SceneConfig, s: f64) -> (Vec3, f64) {
    match cfg.path {
        CameraPath::Straight => (Vec3::new(s, 0.0, 0.0), 0.0),
        CameraPath::Arc => {
            let r = cfg.arc_radius;
            let psi = s / r;
            (Vec3::new(r * psi.sin(), r - r * psi.cos(), 0.0), psi)
        }
    }
}

/// Camera-to-world pose at arc length `s`: columns right, down, forward.
fn camera_pose(cfg: &SceneConfig, s: f64) -> Pose {
    let (p, psi) = path_frame(cfg, s);
    let forward = Vec3::new(psi.cos(), psi.sin(), 0.0);
    let right = Vec3::new(psi.sin(), -psi.cos(), 0.0);
    let down = Vec3::new(0.0, 0.0, -1.0);
    Pose {
        rotation: Mat3::from_columns(&[right, down, forward]),
        translation: p + Vec3::new(0.0, 0.0, cfg.camera_height),
        timestamp: None,
    }
}

/// Samples a point on the five exposed faces (all but the bottom) of a box
/// with half extents `h`, uniformly by area; returns the offset from the center.
fn sample_box_surface(rng: &mut ChaCha8Rng, h: &Vec3) -> Vec3 {
    let areas = [h.x * h.y, h.y * h.z, h.y * h.z, h.x * h.z, h.x * h.z];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut face = 0;
    while face < 4 && pick >= areas[face] {
        pick -= areas[face];
        face += 1;
    }
    let mut u = || rng.random_range(-1.0..1.0);
    match face {
        0 => Vec3::new(u() * h.x, u() * h.y, h.z),
        1 => Vec3::new(h.x, u() * h.y, u() * h.z),
        2 => Vec3::new(-h.x, u() * h.y, u() * h.z),
        3 => Vec3::new(u() * h.x, h.y, u() * h.z),
        _ => Vec3::new(u() * h.x, -h.y, u() * h.z),
    }
}

fn build_world(cfg: &SceneConfig) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let travel = cfg.camera_speed * cfg.frame_period * cfg.frames as f64;
    let s_range = (-5.0, travel + 60.0);
    let left_at = |s: f64| {
        let (p, psi) = path_frame(cfg, s);
        (
            p,
            Vec3::new(-psi.sin(), psi.cos(), 0.0),
            Vec3::new(psi.cos(), psi.sin(), 0.0),
        )
    };

    let static_boxes: Vec<Aabb> = (0..cfg.static_boxes)
        .map(|_| {
            let s = rng.random_range(s_range.0..s_range.1);
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let lateral = side * rng.random_range(0.6..1.0) * cfg.ground_extent;
            let half = Vec3::new(
                rng.random_range(2.0..5.0),
                rng.random_range(1.5..3.0),
                rng.random_range(1.5..4.0),
            );
            let (p, left, _) = left_at(s);
            Aabb {
                center: p + left * lateral + Vec3::new(0.0, 0.0, half.z),
                half,
                velocity: Vec3::zeros(),
            }
        })
        .collect();

    let half_body = Vec3::new(cfg.body_size[0], cfg.body_size[1], cfg.body_size[2]) * 0.5;
    let bodies: Vec<Aabb> = (0..cfg.dynamic_bodies)
        .map(|_| {
            let s = rng.random_range(8.0..35.0);
            let lanes = [-7.0, -3.5, 3.5, 7.0];
            let lateral = lanes[rng.random_range(0..lanes.len())] + rng.random_range(-0.3..0.3);
            let (p, left, fwd) = left_at(s);
            let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let speed = rng.random_range(cfg.body_speed[0]..=cfg.body_speed[1]);
            // Axis-aligned boxes: align the long side with the dominant axis of travel.
            let half = if fwd.x.abs() >= fwd.y.abs() {
                half_body
            } else {
                Vec3::new(half_body.y, half_body.x, half_body.z)
            };
            Aabb {
                center: p + left * lateral + Vec3::new(0.0, 0.0, half.z),
                half,
                velocity: fwd * dir * speed,
            }
        })
        .collect();

    let n_box_points = if cfg.static_boxes == 0 {
        0
    } else {
        cfg.n_static * 2 / 5
    };
    let mut anchors = Vec::with_capacity(cfg.n_static + cfg.n_dynamic);
    for _ in 0..cfg.n_static - n_box_points {
        let s = rng.random_range(s_range.0..s_range.1);
        let lateral = rng.random_range(-cfg.ground_extent..cfg.ground_extent);
        let (p, left, _) = left_at(s);
        anchors.push(Anchor::Fixed(p + left * lateral));
    }
    for i in 0..n_box_points {
        let b = &static_boxes[i % static_boxes.len()];
        anchors.push(Anchor::Fixed(
            b.center + sample_box_surface(&mut rng, &b.half),
        ));
    }
    for i in 0..cfg.n_dynamic {
        let body = i % bodies.len();
        anchors.push(Anchor::Body {
            body,
            offset: sample_box_surface(&mut rng, &bodies[body].half),
        });
    }
    World {
        anchors,
        static_boxes,
        bodies,
    }
}

fn convex_hull(mut pts: Vec<Vec2>) -> Vec<Vec2> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross =
        |o: &Vec2, a: &Vec2, b: &Vec2| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2
                && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Sets every pixel whose unit square overlaps the convex polygon `hull`.
fn rasterize_conservative(hull: &[Vec2], mask: &mut BinaryMask) {
    if hull.is_empty() {
        return;
    }
    let (w, h) = (mask.width as i64, mask.height as i64);
    let min = hull
        .iter()
        .fold(Vec2::repeat(f64::INFINITY), |m, p| m.inf(p));
    let max = hull
        .iter()
        .fold(Vec2::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
    let x0 = ((min.x - 0.5).floor() as i64).max(0);
    let x1 = ((max.x + 0.5).ceil() as i64).min(w - 1);
    let y0 = ((min.y - 0.5).floor() as i64).max(0);
    let y1 = ((max.y + 0.5).ceil() as i64).min(h - 1);
    // Separating axes: the pixel's own axes are covered by the bounding box.
    let axes: Vec<Vec2> = (0..hull.len())
        .map(|i| {
            let e = hull[(i + 1) % hull.len()] - hull[i];
            Vec2::new(-e.y, e.x)
        })
        .filter(|n| n.norm() > 0.0)
        .collect();
    let ranges: Vec<(f64, f64)> = axes
        .iter()
        .map(|n| {
            hull.iter()
                .map(|p| n.dot(p))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                    (a.min(v), b.max(v))
                })
        })
        .collect();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (cx, cy) = (x as f64, y as f64);
            if cx + 0.5 < min.x || cx - 0.5 > max.x || cy + 0.5 < min.y || cy - 0.5 > max.y {
                continue;
            }
            let separated = axes.iter().zip(&ranges).any(|(n, (lo, hi))| {
                let c = n.x * cx + n.y * cy;
                let r = 0.5 * (n.x.abs() + n.y.abs());
                c + r < *lo || c - r > *hi
            });
            if !separated {
                mask.bits[(y * w + x) as usize] = true;
            }
        }
    }
}

/// Silhouette of a box in camera coordinates, clipped at the near plane.
fn render_box(k: &CameraIntrinsics, corners_cam: &[Vec3; 8], mask: &mut BinaryMask) {
    let mut verts: Vec<Vec3> = corners_cam
        .iter()
        .filter(|c| c.z >= NEAR)
        .copied()
        .collect();
    if verts.len() < 8 {
        for i in 0..8 {
            for bit in 0..3 {
                let j = i | (1 << bit);
                if j == i {
                    continue;
                }
                let (a, b) = (corners_cam[i], corners_cam[j]);
                if (a.z - NEAR) * (b.z - NEAR) < 0.0 {
                    let t = (NEAR - a.z) / (b.z - a.z);
                    verts.push(a + (b - a) * t);
                }
            }
        }
    }
    let projected: Vec<Vec2> = verts
        .iter()
        .map(|v| Vec2::new(k.fx * v.x / v.z + k.cx, k.fy * v.y / v.z + k.cy))
        .collect();
    rasterize_conservative(&convex_hull(projected), mask);
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` keyed by its arguments.
fn keyed_uniform(seed: u64, frame: i64, cell: u64, stream: u64) -> f64 {
    let h = splitmix64(
        splitmix64(splitmix64(seed ^ stream.wrapping_mul(0xA24B_AED4_963E_E407)) ^ frame as u64)
            ^ cell,
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn frame_rng(seed: u64, frame: i64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(frame as u64 ^ 0x5EED)))
}

struct RawFrame {
    frame: SceneFrame,
    /// Per-cell flags on the `CELL`-pixel grid: true silhouette present, and near one.
    gt_cells: Vec<bool>,
    near_cells: Vec<bool>,
}

fn generate_frame(cfg: &SceneConfig, world: &World, frame_id: i64) -> Result<RawFrame, SynthError> {
    let k = &cfg.camera;
    let t = frame_id as f64 * cfg.frame_period;
    let cam_to_world = camera_pose(cfg, cfg.camera_speed * t).with_timestamp(Some(t));
    let world_to_cam = cam_to_world.inverse();
    let eye = cam_to_world.translation;
    let mut rng = frame_rng(cfg.seed, frame_id);
    let noise = Normal::new(0.0, cfg.pixel_noise.max(1e-300)).expect("finite sigma");

    let mut frame = SceneFrame {
        frame_id,
        timestamp: t,
        gt_pose: cam_to_world,
        points: Vec::new(),
        clean_pixels: Vec::new(),
        world_points: Vec::new(),
        gt_dynamic: Vec::new(),
        gt_mask: BinaryMask::empty(k.width, k.height),
        corrupted_mask: BinaryMask::empty(k.width, k.height),
        detections: Vec::new(),
    };

    for (id, anchor) in world.anchors.iter().enumerate() {
        // Draw noise for every point so visibility does not shift other points' noise.
        let (nu, nv) = if cfg.pixel_noise > 0.0 {
            (noise.sample(&mut rng), noise.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        let x = world.position(anchor, t);
        let xc = world_to_cam.transform_point(&x);
        if xc.z <= NEAR {
            continue;
        }
        let clean = Vec2::new(k.fx * xc.x / xc.z + k.cx, k.fy * xc.y / xc.z + k.cy);
        let noisy = clean + Vec2::new(nu, nv);
        let inside =
            |p: &Vec2| p.x >= 0.0 && p.y >= 0.0 && p.x < k.width as f64 && p.y < k.height as f64;
        if !inside(&clean) || !inside(&noisy) || world.occluded(t, &eye, &x) {
            continue;
        }
        frame.points.push(PointObservation {
            track_id: id as i64,
            frame_id,
            pixel: noisy,
            point3d: (xc.z <= cfg.max_depth).then_some(xc),
        });
        frame.clean_pixels.push(clean);
        frame.world_points.push(x);
        frame.gt_dynamic.push(matches!(anchor, Anchor::Body { .. }));
    }
    if frame.points.is_empty() {
        return Err(SynthError::EmptyView { frame: frame_id });
    }

    for body in &world.bodies {
        let corners = body.corners_at(t).map(|c| world_to_cam.transform_point(&c));
        if corners.iter().any(|c| c.z >= NEAR) {
            render_box(k, &corners, &mut frame.gt_mask);
        }
    }
    frame.gt_mask.bits = dilate(&frame.gt_mask.bits, k.width, k.height, 1);

    let (gw, gh) = (
        k.width.div_ceil(CELL) as usize,
        k.height.div_ceil(CELL) as usize,
    );
    let mut gt_cells = vec![false; gw * gh];
    for (i, _) in frame.gt_mask.bits.iter().enumerate().filter(|(_, b)| **b) {
        let (x, y) = (i % k.width as usize, i / k.width as usize);
        gt_cells[(y / CELL as usize) * gw + x / CELL as usize] = true;
    }
    let mut near_cells = vec![false; gw * gh];
    for cy in 0..gh {
        for cx in 0..gw {
            near_cells[cy * gw + cx] = (cy.saturating_sub(2)..(cy + 3).min(gh))
                .any(|y| (cx.saturating_sub(2)..(cx + 3).min(gw)).any(|x| gt_cells[y * gw + x]));
        }
    }
    Ok(RawFrame {
        frame,
        gt_cells,
        near_cells,
    })
}

fn cell_of(cfg: &SceneConfig, x: u32, y: u32) -> usize {
    let gw = cfg.camera.width.div_ceil(CELL) as usize;
    (y / CELL) as usize * gw + (x / CELL) as usize
}

/// Corrupted state of one pixel for erase rate `e` and spurious rate `f`.
fn corrupted_pixel(cfg: &SceneConfig, raw: &RawFrame, x: u32, y: u32, e: f64, f: f64) -> bool {
    let cell = cell_of(cfg, x, y);
    let fid = raw.frame.frame_id;
    if raw.gt_cells[cell] {
        raw.frame.gt_mask.bits[(y * cfg.camera.width + x) as usize]
            && keyed_uniform(cfg.seed, fid, cell as u64, 1) >= e
    } else {
        let rate = if raw.near_cells[cell] {
            f * NEAR_SILHOUETTE_BOOST
        } else {
            f
        };
        keyed_uniform(cfg.seed, fid, cell as u64, 2) < rate
    }
}

fn measure(cfg: &SceneConfig, raws: &[RawFrame], e: f64, f: f64) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for raw in raws {
        for (p, dynamic) in raw.frame.points.iter().zip(&raw.frame.gt_dynamic) {
            let x = p.pixel.x.round().clamp(0.0, (cfg.camera.width - 1) as f64) as u32;
            let y = p.pixel.y.round().clamp(0.0, (cfg.camera.height - 1) as f64) as u32;
            match (corrupted_pixel(cfg, raw, x, y, e, f), *dynamic) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    (tp, fp, fn_)
}

/// Bisection for the rate in `[0, hi]` whose monotone score is closest to `target`.
fn search_rate(hi: f64, target: f64, score: impl Fn(f64) -> Option<f64>) -> f64 {
    let at = |r: f64| score(r).unwrap_or(target);
    if at(0.0) <= target {
        return 0.0;
    }
    let (mut lo, mut up) = (0.0, hi);
    for _ in 0..40 {
        let mid = 0.5 * (lo + up);
        if at(mid) > target {
            lo = mid;
        } else {
            up = mid;
        }
    }
    if (at(lo) - target).abs() <= (at(up) - target).abs() {
        lo
    } else {
        up
    }
}

fn connected_components(mask: &BinaryMask) -> Vec<Vec<usize>> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut seen = vec![false; mask.bits.len()];
    let mut out = Vec::new();
    for start in 0..mask.bits.len() {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = (i as i64 % w, i as i64 / w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h {
                        let j = (ny * w + nx) as usize;
                        if mask.bits[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Run-length code of a frame whose set pixels are the sorted indices `set`;
/// identical to [`crate::masks::rle_encode`] on the expanded bitmap.
fn rle_from_sorted(set: &[usize], total: usize) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut pos = 0usize;
    let mut i = 0;
    while i < set.len() {
        let start = set[i];
        let mut end = start + 1;
        i += 1;
        while i < set.len() && set[i] == end {
            end += 1;
            i += 1;
        }
        runs.push((start - pos) as u32);
        runs.push((end - start) as u32);
        pos = end;
    }
    if pos < total || runs.is_empty() {
        runs.push((total - pos) as u32);
    }
    runs
}

fn detections_from_mask(
    cfg: &SceneConfig,
    frame_id: i64,
    mask: &BinaryMask,
) -> Vec<DetectionRecord> {
    let w = mask.width as usize;
    connected_components(mask)
        .into_iter()
        .enumerate()
        .map(|(idx, comp)| {
            let xs = comp.iter().map(|i| i % w);
            let ys = comp.iter().map(|i| i / w);
            let (x0, x1) = (xs.clone().min().unwrap(), xs.max().unwrap());
            let (y0, y1) = (ys.clone().min().unwrap(), ys.max().unwrap());
            let conf = 0.80 + 0.15 * keyed_uniform(cfg.seed, frame_id, idx as u64, 3);
            DetectionRecord {
                frame_id,
                class_id: VEHICLE_CLASS_ID,
                class_name: "car".into(),
                confidence: (conf * 1e4).round() / 1e4,
                bbox: BBox::new(
                    x0 as f64,
                    y0 as f64,
                    (x1 - x0 + 1) as f64,
                    (y1 - y0 + 1) as f64,
                ),
                mask: Some(DetectionMask::Rle(rle_from_sorted(&comp, mask.bits.len()))),
            }
        })
        .collect()
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene, SynthError> {
    generate_scene_with(cfg, Exec::default())
}

pub fn generate_scene_with(cfg: &SceneConfig, exec: Exec) -> Result<Scene, SynthError> {
    cfg.validate()?;
    let world = build_world(cfg);
    let mut raws = exec
        .map_range(cfg.frames, |k| generate_frame(cfg, &world, k as i64))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let positives = raws
        .iter()
        .flat_map(|r| &r.frame.gt_dynamic)
        .filter(|d| **d)
        .count() as u64;
    let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    // A target of exactly 1 requests the untouched silhouettes.
    let erase = if positives == 0 || cfg.recall_target >= 1.0 {
        0.0
    } else {
        search_rate(1.0, cfg.recall_target, |e| {
            let (tp, _, fn_) = measure(cfg, &raws, e, 0.0);
            ratio(tp, tp + fn_)
        })
    };
    let spurious = if positives == 0 || cfg.precision_target >= 1.0 {
        0.0
    } else {
        search_rate(1.0, cfg.precision_target, |f| {
            let (tp, fp, _) = measure(cfg, &raws, erase, f);
            ratio(tp, tp + fp)
        })
    };
    let (tp, fp, fn_) = measure(cfg, &raws, erase, spurious);
    let corruption = CorruptionStats {
        erase_rate: erase,
        spurious_rate: spurious,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        labeled_points: raws.iter().map(|r| r.frame.points.len()).sum(),
    };

    let finished: Vec<SceneFrame> = {
        let raws_ref = &raws;
        exec.map_range(raws.len(), |i| {
            let raw = &raws_ref[i];
            let (w, h) = (cfg.camera.width, cfg.camera.height);
            let mut mask = BinaryMask::empty(w, h);
            for y in 0..h {
                for x in 0..w {
                    mask.bits[(y * w + x) as usize] =
                        corrupted_pixel(cfg, raw, x, y, erase, spurious);
                }
            }
            let detections = detections_from_mask(cfg, raw.frame.frame_id, &mask);
            (mask, detections)
        })
        .into_iter()
        .zip(raws.iter_mut())
        .map(|((mask, dets), raw)| {
            let mut f = std::mem::replace(&mut raw.frame, empty_frame());
            f.corrupted_mask = mask;
            f.detections = dets;
            f
        })
        .collect()
    };

    let trajectory = Trajectory::new(
        finished.iter().map(|f| f.gt_pose).collect(),
        TrajectoryFormat::Kitti,
    );
    Ok(Scene {
        config: cfg.clone(),
        frames: finished,
        trajectory,
        corruption,
    })
}

fn empty_frame() -> SceneFrame {
    SceneFrame {
        frame_id: 0,
        timestamp: 0.0,
        gt_pose: Pose::identity(),
        points: Vec::new(),
        clean_pixels: Vec::new(),
        world_points: Vec::new(),
        gt_dynamic: Vec::new(),
        gt_mask: BinaryMask::empty(0, 0),
        corrupted_mask: BinaryMask::empty(0, 0),
        detections: Vec::new(),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    generator: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a SceneConfig,
    corruption: &'a CorruptionStats,
    frames: usize,
    points_per_frame: BTreeMap<String, usize>,
    files: Vec<String>,
}

/// Paths written by [`export_scene`], relative to the output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ExportSummary {
    pub files: Vec<String>,
}

/// Writes the scene in the formats the pipeline reads:
///
/// * `points/NNNNNN.txt`, `labels.txt`, `gt_poses.txt` (KITTI)
/// * `detections.jsonl` built from the degraded masks
/// * `masks/gt_NNNNNN.pgm` and `masks/det_NNNNNN.pgm`
/// * `pipeline.toml` with the camera and frame period
/// * `manifest.json` with the configuration and corruption results
///
/// A scene without frames produces only the manifest.
pub fn export_scene(scene: &Scene, dir: &Path) -> Result<ExportSummary, SynthError> {
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|source| SynthError::Fs {
            path: p.to_path_buf(),
            source,
        })
    };
    let write = |p: &Path, text: &str| {
        fs::write(p, text).map_err(|source| SynthError::Fs {
            path: p.to_path_buf(),
            source,
        })
    };
    mkdir(dir)?;
    let mut files = Vec::new();
    let cfg = &scene.config;
    if !scene.frames.is_empty() {
        mkdir(&dir.join("points"))?;
        mkdir(&dir.join("masks"))?;
        for f in &scene.frames {
            let name = frame_file_name(f.frame_id);
            write(&dir.join("points").join(&name), &format_points(&f.points))?;
            files.push(format!("points/{name}"));
            let stem = format!("{:06}", f.frame_id);
            for (kind, mask) in [("gt", &f.gt_mask), ("det", &f.corrupted_mask)] {
                let rel = format!("masks/{kind}_{stem}.pgm");
                write_pgm(
                    &dir.join(&rel),
                    mask.width,
                    mask.height,
                    &mask.to_pgm_bytes(),
                )?;
                files.push(rel);
            }
        }
        let dets: Vec<DetectionRecord> = scene
            .frames
            .iter()
            .flat_map(|f| f.detections.iter().cloned())
            .collect();
        write_detections_jsonl(&dir.join("detections.jsonl"), &dets)?;
        write(&dir.join("labels.txt"), &format_labels(&scene.labels()))?;
        write_trajectory(
            &dir.join("gt_poses.txt"),
            &scene.trajectory,
            TrajectoryFormat::Kitti,
        )?;
        let k = &cfg.camera;
        let toml = format!(
            "camera_fx = {:?}\ncamera_fy = {:?}\ncamera_cx = {:?}\ncamera_cy = {:?}\ncamera_width = {}\ncamera_height = {}\nframe_period = {:?}\n",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height, cfg.frame_period
        );
        write(&dir.join("pipeline.toml"), &toml)?;
        files.extend(
            [
                "detections.jsonl",
                "labels.txt",
                "gt_poses.txt",
                "pipeline.toml",
            ]
            .map(String::from),
        );
    }
    files.sort();
    let manifest = Manifest {
        generator: "pcr-synth",
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg,
        corruption: &scene.corruption,
        frames: scene.frames.len(),
        points_per_frame: scene
            .frames
            .iter()
            .map(|f| (format!("{:06}", f.frame_id), f.points.len()))
            .collect(),
        files: files.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&dir.join("manifest.json"), &(json + "\n"))?;
    files.push("manifest.json".into());
    Ok(ExportSummary { files })
}
