//! Robust camera-pose refinement and the keyframe gate.
//!
//! [`refine_pose`] minimizes `Σ ρ(√wᵢ·‖zᵢ − π(K, T·Xᵢ)‖)` over the unfiltered
//! correspondences with iteratively reweighted Gauss–Newton, Levenberg damping
//! and left-multiplied SE(3) increments. Normal equations are accumulated with
//! [`Exec::tree_reduce`] over a canonically sorted correspondence list, so the
//! result does not depend on input order or worker count.

use std::cmp::Ordering;

use nalgebra::{Matrix2x3, Matrix2x6, Matrix6, Vector2, Vector6};
use thiserror::Error;

use crate::geometry::{skew, CameraIntrinsics, Pose, Vec2, Vec3};
use crate::par::Exec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("underdetermined pose: {0}")]
    Underdetermined(String),
    #[error("damping exceeded {max_lambda:e} without decreasing the cost (best cost {cost})")]
    NoConvergence {
        best: Box<Pose>,
        cost: f64,
        max_lambda: f64,
    },
    #[error("invalid robust kernel: delta must be positive, got {0}")]
    InvalidKernel(f64),
}

/// Huber loss `ρ(r)` and its IRLS weight `ρ'(r)/r`.
pub fn huber(r: f64, delta: f64) -> (f64, f64) {
    if r <= delta {
        (0.5 * r * r, 1.0)
    } else {
        (delta * (r - 0.5 * delta), delta / r)
    }
}

/// Huber kernel with knee `delta` pixels; `f64::INFINITY` gives plain least squares.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustKernel {
    pub delta: f64,
}

impl RobustKernel {
    pub fn huber(delta: f64) -> Self {
        Self { delta }
    }

    pub fn quadratic() -> Self {
        Self {
            delta: f64::INFINITY,
        }
    }
}

impl Default for RobustKernel {
    fn default() -> Self {
        Self { delta: 2.0 }
    }
}

/// One map point and its observation in the current frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    /// World position in meters.
    pub map_point: Vec3,
    /// Observed pixel.
    pub observation: Vec2,
    /// Scalar information weight, typically the point's staticness.
    pub info_weight: f64,
    /// Filtered correspondences take no part in the optimization.
    pub filtered: bool,
}

impl Correspondence {
    pub fn new(map_point: Vec3, observation: Vec2, info_weight: f64) -> Self {
        Self {
            map_point,
            observation,
            info_weight,
            filtered: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineOptions {
    pub kernel: RobustKernel,
    pub max_iters: usize,
    pub initial_lambda: f64,
    pub max_lambda: f64,
    pub min_step: f64,
    pub min_decrease: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            kernel: RobustKernel::default(),
            max_iters: 50,
            initial_lambda: 1e-4,
            max_lambda: 1e8,
            min_step: 1e-8,
            min_decrease: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    /// Robust objective over the valid correspondences at `pose`.
    pub cost: f64,
    /// Accepted steps.
    pub iterations: usize,
    /// Correspondences that took part (unfiltered, in front of the initial pose).
    pub n_valid: usize,
}

/// Reprojection residual `π(K, T·X) − z` and its Jacobian with respect to a
/// left increment `(ω, v)` of `T`. `None` when the point is not in front of the camera.
pub fn reprojection_jacobian(
    k: &CameraIntrinsics,
    pose: &Pose,
    map_point: &Vec3,
    observation: &Vec2,
) -> Option<(Vector2<f64>, Matrix2x6<f64>)> {
    let xc = pose.transform_point(map_point);
    if !(xc.z > 0.0) {
        return None;
    }
    let iz = 1.0 / xc.z;
    let u = k.fx * xc.x * iz + k.cx;
    let v = k.fy * xc.y * iz + k.cy;
    #[rustfmt::skip]
    let d_pi = Matrix2x3::new(
        k.fx * iz, 0.0, -k.fx * xc.x * iz * iz,
        0.0, k.fy * iz, -k.fy * xc.y * iz * iz,
    );
    let mut d_x = Matrix2x6::zeros();
    d_x.fixed_view_mut::<2, 3>(0, 0)
        .copy_from(&(d_pi * -skew(&xc)));
    d_x.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_pi);
    Some((Vector2::new(u - observation.x, v - observation.y), d_x))
}

#[derive(Clone, Debug)]
struct Normal {
    h: Matrix6<f64>,
    g: Vector6<f64>,
    cost: f64,
}

impl Normal {
    fn zero() -> Self {
        Self {
            h: Matrix6::zeros(),
            g: Vector6::zeros(),
            cost: 0.0,
        }
    }

    fn add(&self, o: &Normal) -> Normal {
        Normal {
            h: self.h + o.h,
            g: self.g + o.g,
            cost: self.cost + o.cost,
        }
    }
}

fn total_cmp_corr(a: &Correspondence, b: &Correspondence) -> Ordering {
    let ka = [
        a.map_point.x,
        a.map_point.y,
        a.map_point.z,
        a.observation.x,
        a.observation.y,
        a.info_weight,
    ];
    let kb = [
        b.map_point.x,
        b.map_point.y,
        b.map_point.z,
        b.observation.x,
        b.observation.y,
        b.info_weight,
    ];
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Robust cost only; `INFINITY` if any point falls behind the camera.
fn evaluate_cost(
    k: &CameraIntrinsics,
    pose: &Pose,
    corr: &[Correspondence],
    delta: f64,
    exec: Exec,
) -> f64 {
    let terms = exec.map(corr, |c| {
        let xc = pose.transform_point(&c.map_point);
        if !(xc.z > 0.0) {
            return f64::INFINITY;
        }
        let e = Vec2::new(k.fx * xc.x / xc.z + k.cx, k.fy * xc.y / xc.z + k.cy) - c.observation;
        huber(c.info_weight.sqrt() * e.norm(), delta).0
    });
    exec.tree_reduce(&terms, 0.0, |a, b| a + b)
}

fn accumulate(
    k: &CameraIntrinsics,
    pose: &Pose,
    corr: &[Correspondence],
    delta: f64,
    exec: Exec,
) -> Normal {
    let parts = exec.map(corr, |c| {
        match reprojection_jacobian(k, pose, &c.map_point, &c.observation) {
            None => Normal {
                h: Matrix6::zeros(),
                g: Vector6::zeros(),
                cost: f64::INFINITY,
            },
            Some((e, j)) => {
                let r = c.info_weight.sqrt() * e.norm();
                let (rho, irls) = huber(r, delta);
                let s = irls * c.info_weight;
                Normal {
                    h: j.transpose() * j * s,
                    g: j.transpose() * e * s,
                    cost: rho,
                }
            }
        }
    });
    exec.tree_reduce(&parts, Normal::zero(), Normal::add)
}

fn check_geometry(valid: &[Correspondence]) -> Result<(), PoseError> {
    if valid.len() < 3 {
        return Err(PoseError::Underdetermined(format!(
            "{} valid correspondences, need at least 3",
            valid.len()
        )));
    }
    let n = valid.len() as f64;
    let mean = valid.iter().map(|c| c.observation).sum::<Vec2>() / n;
    let cov = valid.iter().fold(nalgebra::Matrix2::zeros(), |acc, c| {
        let d = c.observation - mean;
        acc + d * d.transpose()
    });
    let eig = cov.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo <= 1e-9 * hi {
        return Err(PoseError::Underdetermined(
            "image observations are collinear".into(),
        ));
    }
    Ok(())
}

/// Refines `init` (world-to-camera) against the unfiltered correspondences.
///
/// Correspondences behind the camera at `init` are dropped; a step that moves
/// any remaining point behind the camera is rejected like any other
/// cost-increasing step. Accepted steps never increase the cost.
pub fn refine_pose(
    init: &Pose,
    corr: &[Correspondence],
    k: &CameraIntrinsics,
    opts: &RefineOptions,
    exec: Exec,
) -> Result<PoseEstimate, PoseError> {
    let delta = opts.kernel.delta;
    if !(delta > 0.0) {
        return Err(PoseError::InvalidKernel(delta));
    }
    let mut valid: Vec<Correspondence> = corr
        .iter()
        .filter(|c| {
            !c.filtered && c.info_weight > 0.0 && init.transform_point(&c.map_point).z > 0.0
        })
        .copied()
        .collect();
    check_geometry(&valid)?;
    valid.sort_by(total_cmp_corr);

    let mut pose = *init;
    let mut normal = accumulate(k, &pose, &valid, delta, exec);
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iters {
        loop {
            let mut h = normal.h;
            for i in 0..6 {
                h[(i, i)] += lambda * (normal.h[(i, i)] + 1e-12);
            }
            let Some(step) = h.cholesky().map(|c| c.solve(&-normal.g)) else {
                lambda *= 10.0;
                if lambda > opts.max_lambda {
                    return Err(PoseError::NoConvergence {
                        best: Box::new(pose),
                        cost: normal.cost,
                        max_lambda: opts.max_lambda,
                    });
                }
                continue;
            };
            if step.norm() < opts.min_step {
                break 'outer;
            }
            let candidate = pose.left_update(&step);
            let cost = evaluate_cost(k, &candidate, &valid, delta, exec);
            if cost < normal.cost {
                let decrease = normal.cost - cost;
                pose = candidate;
                iterations += 1;
                normal = accumulate(k, &pose, &valid, delta, exec);
                lambda = (lambda * 0.1).max(1e-12);
                if decrease < opts.min_decrease {
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > opts.max_lambda {
                return Err(PoseError::NoConvergence {
                    best: Box::new(pose),
                    cost: normal.cost,
                    max_lambda: opts.max_lambda,
                });
            }
        }
    }
    Ok(PoseEstimate {
        pose,
        cost: normal.cost,
        iterations,
        n_valid: valid.len(),
    })
}

/// Thresholds of the keyframe gate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyframePolicy {
    pub n_min: usize,
    /// Largest tolerated share of filtered points.
    pub rho_max: f64,
    /// Seconds since the last keyframe.
    pub dt_min: f64,
    /// Median tracked-point displacement in pixels since the last keyframe.
    pub q_min: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            n_min: 50,
            rho_max: 0.6,
            dt_min: 0.25,
            q_min: 20.0,
        }
    }
}

/// Inserts a keyframe when enough matches survive, the filtered share is
/// tolerable, and either enough time or enough motion has accumulated.
pub fn keyframe_decision(
    n_matches: usize,
    n_filtered: usize,
    dt: f64,
    q_motion: f64,
    policy: &KeyframePolicy,
) -> bool {
    let total = n_matches + n_filtered;
    if total == 0 {
        return false;
    }
    let ratio = n_filtered as f64 / total as f64;
    n_matches >= policy.n_min
        && ratio <= policy.rho_max
        && (dt >= policy.dt_min || q_motion >= policy.q_min)
}
