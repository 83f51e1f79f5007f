use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{fit_plane_svd, Plane, Vec3};
use crate::par::Exec;

use super::FilterError;

/// Hypotheses sampled and scored together before the sequential acceptance scan.
const BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub max_iters: usize,
    /// Inlier distance in meters.
    pub inlier_threshold: f64,
    pub seed: u64,
    /// Success probability of the early-termination bound.
    pub confidence: f64,
}

impl RansacParams {
    pub fn new(max_iters: usize, inlier_threshold: f64, seed: u64) -> Self {
        Self {
            max_iters,
            inlier_threshold,
            seed,
            confidence: 0.99,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacResult {
    pub plane: Plane,
    /// Indices within the threshold of the refitted plane, ascending.
    pub inliers: Vec<usize>,
    /// Hypotheses evaluated before termination.
    pub iterations: usize,
}

/// Seeded 3-point RANSAC plane estimation with SVD refit.
pub fn ransac_ground_plane(
    points: &[Vec3],
    n_iter: usize,
    tau: f64,
    seed: u64,
) -> Result<RansacResult, FilterError> {
    ransac_ground_plane_with(
        points,
        &RansacParams::new(n_iter, tau, seed),
        Exec::default(),
    )
}

/// Iterations needed so that an all-inlier triple was drawn with probability
/// `confidence`, given inlier ratio `w`.
fn required_iterations(w: f64, confidence: f64) -> f64 {
    let good = w.powi(3);
    if good >= 1.0 - 1e-15 {
        return 0.0;
    }
    if good <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - good).ln()
}

fn plane_through(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Plane> {
    let n = (b - a).cross(&(c - a));
    let scale = (b - a).norm() * (c - a).norm();
    if !(n.norm() > 1e-12 * scale) {
        return None;
    }
    Plane::from_normal_point(&n, a).ok()
}

/// Hypotheses are drawn sequentially from the seeded generator and scored in
/// parallel batches; acceptance and early termination are then decided in
/// draw order, so the result is identical for every [`Exec`] policy. Ties in
/// inlier count keep the earlier hypothesis.
pub fn ransac_ground_plane_with(
    points: &[Vec3],
    params: &RansacParams,
    exec: Exec,
) -> Result<RansacResult, FilterError> {
    let n = points.len();
    if n < 3 {
        return Err(FilterError::InsufficientData { needed: 3, got: n });
    }
    if !(params.inlier_threshold > 0.0) || params.max_iters == 0 {
        return Err(FilterError::InvalidParams(
            "ransac needs a positive threshold and at least one iteration".into(),
        ));
    }
    let tau = params.inlier_threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Plane, usize)> = None;
    let mut done = 0usize;
    let mut needed = f64::INFINITY;

    'outer: while done < params.max_iters {
        let batch = BATCH.min(params.max_iters - done);
        let samples: Vec<[usize; 3]> = (0..batch)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n);
                while j == i {
                    j = rng.random_range(0..n);
                }
                let mut k = rng.random_range(0..n);
                while k == i || k == j {
                    k = rng.random_range(0..n);
                }
                [i, j, k]
            })
            .collect();
        let scored: Vec<Option<(Plane, usize)>> = exec.map(&samples, |s| {
            let plane = plane_through(&points[s[0]], &points[s[1]], &points[s[2]])?;
            let count = points.iter().filter(|p| plane.distance(p) <= tau).count();
            Some((plane, count))
        });
        for hyp in scored {
            done += 1;
            if let Some((plane, count)) = hyp {
                if best.as_ref().is_none_or(|b| count > b.1) {
                    best = Some((plane, count));
                    needed = required_iterations(count as f64 / n as f64, params.confidence);
                }
            }
            if best.is_some() && done as f64 >= needed {
                break 'outer;
            }
        }
    }

    let (hypothesis, _) = best.ok_or(FilterError::NoPlane)?;
    let support: Vec<Vec3> = points
        .iter()
        .filter(|p| hypothesis.distance(p) <= tau)
        .copied()
        .collect();
    let plane = fit_plane_svd(&support).unwrap_or(hypothesis);
    let inliers = (0..n)
        .filter(|&i| plane.distance(&points[i]) <= tau)
        .collect();
    Ok(RansacResult {
        plane,
        inliers,
        iterations: done,
    })
}

/// `clamp(α·camera_height, τ_min, τ_max)`.
pub fn adaptive_ground_threshold(
    camera_height: f64,
    alpha: f64,
    tau_min: f64,
    tau_max: f64,
) -> f64 {
    (alpha * camera_height.max(0.0)).clamp(tau_min, tau_max)
}
