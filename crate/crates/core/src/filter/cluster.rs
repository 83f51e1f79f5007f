use crate::geometry::Vec2;
use crate::par::Exec;

/// Single-pass neighborhood expansion of an outlier set.
///
/// A point that is not yet an outlier joins when at least `min_k` current
/// outliers lie within `radius` pixels and its staticness is below
/// `theta + margin`. Newly added points do not count as neighbors (no
/// chaining), so the result never loses an outlier.
#[allow(clippy::too_many_arguments)]
pub fn cluster_expand(
    pixels: &[Vec2],
    outliers: &[bool],
    staticness: &[f64],
    radius: f64,
    min_k: usize,
    theta: f64,
    margin: f64,
    exec: Exec,
) -> Vec<bool> {
    let seeds: Vec<Vec2> = pixels
        .iter()
        .zip(outliers)
        .filter(|(_, o)| **o)
        .map(|(p, _)| *p)
        .collect();
    let r2 = radius * radius;
    exec.map_range(pixels.len(), |i| {
        if outliers[i] {
            return true;
        }
        if staticness[i] >= theta + margin || seeds.len() < min_k {
            return false;
        }
        let near = seeds
            .iter()
            .filter(|s| (*s - pixels[i]).norm_squared() <= r2)
            .count();
        near >= min_k
    })
}
