use nalgebra::Matrix3;

use crate::geometry::{SimilarityTransform, Vec3};

use super::{EvalError, Trajectory};

/// Timestamp tolerance for associating poses of unequal-length trajectories.
pub const ASSOCIATION_TOLERANCE: f64 = 0.01;

/// Least-squares similarity mapping `src` onto `dst`:
/// `argmin Σ‖dstᵢ − (S·R·srcᵢ + t)‖²`, rigid when `with_scale` is false.
pub fn umeyama_points(
    src: &[Vec3],
    dst: &[Vec3],
    with_scale: bool,
) -> Result<SimilarityTransform, EvalError> {
    if src.len() != dst.len() {
        return Err(EvalError::LengthMismatch {
            left: src.len(),
            right: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(EvalError::DegenerateAlignment(format!(
            "need at least 3 positions, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vec3>() / n;
    let mu_d = dst.iter().sum::<Vec3>() / n;
    let var_s = src.iter().map(|p| (p - mu_s).norm_squared()).sum::<f64>() / n;
    let cov = src.iter().zip(dst).fold(Matrix3::zeros(), |acc, (s, d)| {
        acc + (d - mu_d) * (s - mu_s).transpose()
    }) / n;
    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    let (u, vt) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| sv[*b].total_cmp(&sv[*a]));
    if !(var_s > 0.0) || !(sv[order[0]] > 0.0) || sv[order[1]] <= 1e-10 * sv[order[0]] {
        return Err(EvalError::DegenerateAlignment(
            "positions are coincident or collinear".into(),
        ));
    }
    let mut d = Matrix3::identity();
    if u.determinant() * vt.determinant() < 0.0 {
        // Flip the axis of the smallest singular value to exclude reflections.
        d[(order[2], order[2])] = -1.0;
    }
    let rotation = u * d * vt;
    let scale = if with_scale {
        (Matrix3::from_diagonal(&sv) * d).trace() / var_s
    } else {
        1.0
    };
    let translation = mu_d - scale * rotation * mu_s;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Index pairs `(est, gt)`: by position for equal lengths, otherwise by
/// nearest timestamp within [`ASSOCIATION_TOLERANCE`], each gt pose used once.
pub fn associate(est: &Trajectory, gt: &Trajectory) -> Result<Vec<(usize, usize)>, EvalError> {
    let (ne, ng) = (est.poses.len(), gt.poses.len());
    if ne == ng {
        return Ok((0..ne).map(|i| (i, i)).collect());
    }
    let stamps = |t: &Trajectory| {
        t.poses
            .iter()
            .map(|p| p.timestamp)
            .collect::<Option<Vec<f64>>>()
    };
    let (Some(te), Some(tg)) = (stamps(est), stamps(gt)) else {
        return Err(EvalError::LengthMismatch {
            left: ne,
            right: ng,
        });
    };
    let mut pairs = Vec::new();
    let mut next_gt = 0;
    for (i, t) in te.iter().enumerate() {
        let j = tg.partition_point(|g| g < t);
        let best = [j.wrapping_sub(1), j]
            .into_iter()
            .filter(|&k| k < ng && k >= next_gt)
            .min_by(|&a, &b| (tg[a] - t).abs().total_cmp(&(tg[b] - t).abs()));
        if let Some(k) = best.filter(|&k| (tg[k] - t).abs() <= ASSOCIATION_TOLERANCE) {
            pairs.push((i, k));
            next_gt = k + 1;
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::EmptyAssociation);
    }
    Ok(pairs)
}

/// Similarity mapping the estimated positions onto ground truth.
pub fn umeyama_align(
    est: &Trajectory,
    gt: &Trajectory,
    with_scale: bool,
) -> Result<SimilarityTransform, EvalError> {
    if est.poses.len() != gt.poses.len() {
        return Err(EvalError::LengthMismatch {
            left: est.poses.len(),
            right: gt.poses.len(),
        });
    }
    let src: Vec<Vec3> = est.poses.iter().map(|p| p.translation).collect();
    let dst: Vec<Vec3> = gt.poses.iter().map(|p| p.translation).collect();
    umeyama_points(&src, &dst, with_scale)
}

/// Translational absolute pose error per associated pose.
pub fn ape(
    est: &Trajectory,
    gt: &Trajectory,
    align: bool,
    with_scale: bool,
) -> Result<Vec<f64>, EvalError> {
    let pairs = associate(est, gt)?;
    let src: Vec<Vec3> = pairs
        .iter()
        .map(|&(i, _)| est.poses[i].translation)
        .collect();
    let dst: Vec<Vec3> = pairs
        .iter()
        .map(|&(_, j)| gt.poses[j].translation)
        .collect();
    let s = if align {
        umeyama_points(&src, &dst, with_scale)?
    } else {
        SimilarityTransform::identity()
    };
    Ok(src
        .iter()
        .zip(&dst)
        .map(|(e, g)| (g - s.apply(e)).norm())
        .collect())
}

/// Relative pose error over an index gap: `‖trans(Q_gtᵢ⁻¹·Q_estᵢ)‖` with
/// `Qᵢ = Tᵢ⁻¹·Tᵢ₊Δ`.
pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: usize) -> Result<Vec<f64>, EvalError> {
    let pairs = associate(est, gt)?;
    if delta == 0 || delta >= pairs.len() {
        return Err(EvalError::InvalidDelta {
            delta,
            len: pairs.len(),
        });
    }
    Ok((0..pairs.len() - delta)
        .map(|k| {
            let (ei, gi) = pairs[k];
            let (ej, gj) = pairs[k + delta];
            let q_est = est.poses[ei].inverse().compose(&est.poses[ej]);
            let q_gt = gt.poses[gi].inverse().compose(&gt.poses[gj]);
            q_gt.inverse().compose(&q_est).translation.norm()
        })
        .collect())
}
