use crate::geometry::{HorizonLine, Plane};
use crate::masks::SegMask;

use super::{temporal_motion, FilterWeights, PointObservation, Track};

/// Per-point cue values and the resulting staticness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreBreakdown {
    pub s_seg: f64,
    pub s_motion: f64,
    pub s_ground: f64,
    pub s_edge: f64,
    /// Raw weighted sum `w₁s_seg + w₂s_motion + w₃s_ground + w₄s_edge`.
    pub badness: f64,
    /// `1 − badness`, clamped to `[0, 1]`.
    pub staticness: f64,
    pub outlier: bool,
}

/// Bilinear interpolation of a row-major field; coordinates clamp to the border.
pub fn bilinear_sample(field: &[f32], width: u32, height: u32, x: f64, y: f64) -> f64 {
    if width == 0 || height == 0 {
        return 0.0;
    }
    let xm = (width - 1) as f64;
    let ym = (height - 1) as f64;
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, xm) };
    let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, ym) };
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width as usize - 1);
    let y1 = (y0 + 1).min(height as usize - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let w = width as usize;
    let at = |xx: usize, yy: usize| field[yy * w + xx] as f64;
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Linear ramp on the distance to the nearest image border: 1 within `inner`
/// pixels, 0 beyond `outer`.
pub fn edge_score(u: f64, v: f64, width: u32, height: u32, inner: f64, outer: f64) -> f64 {
    let d = u
        .min(v)
        .min(width as f64 - 1.0 - u)
        .min(height as f64 - 1.0 - v)
        .max(0.0);
    if d <= inner {
        1.0
    } else if d >= outer {
        0.0
    } else {
        (outer - d) / (outer - inner)
    }
}

/// Scores one point. `outlier` reflects only the staticness threshold; the
/// later stages of [`super::filter_frame`] may force it.
pub fn score_point(
    p: &PointObservation,
    seg: &SegMask,
    track: Option<&Track>,
    plane: Option<&Plane>,
    w: &FilterWeights,
) -> ScoreBreakdown {
    let s_seg = bilinear_sample(
        &seg.dynamic_confidence,
        seg.width,
        seg.height,
        p.pixel.x,
        p.pixel.y,
    )
    .clamp(0.0, 1.0);
    let s_motion = track
        .map(|t| (temporal_motion(t, w.motion_window, p.frame_id) / w.v_max).min(1.0))
        .unwrap_or(0.0);
    let s_ground = match (plane, p.point3d) {
        (Some(pl), Some(x)) => (1.0 - pl.distance(&x) / w.tau_ground).clamp(0.0, 1.0),
        _ => 0.0,
    };
    let s_edge = edge_score(
        p.pixel.x,
        p.pixel.y,
        seg.width,
        seg.height,
        w.edge_inner,
        w.edge_outer,
    );
    combine(s_seg, s_motion, s_ground, s_edge, w)
}

pub(crate) fn combine(
    s_seg: f64,
    s_motion: f64,
    s_ground: f64,
    s_edge: f64,
    w: &FilterWeights,
) -> ScoreBreakdown {
    let badness = w.w[0] * s_seg + w.w[1] * s_motion + w.w[2] * s_ground + w.w[3] * s_edge;
    // The weights sum to 1 only up to rounding; snap the ends so that all-zero
    // and all-one cues give exactly 1 and 0.
    let staticness = match 1.0 - badness {
        s if s < 1e-12 => 0.0,
        s if s > 1.0 - 1e-12 => 1.0,
        s => s,
    };
    ScoreBreakdown {
        s_seg,
        s_motion,
        s_ground,
        s_edge,
        badness,
        staticness,
        outlier: staticness < w.theta,
    }
}

/// Sky rejection: the mask marks the pixel as sky, or the pixel is above the
/// horizon, outside any dynamic detection and has no depth.
pub fn sky_test(
    u: f64,
    v: f64,
    has_depth: bool,
    seg: &SegMask,
    horizon: Option<&HorizonLine>,
) -> bool {
    let i = seg.nearest(u, v);
    if seg.sky[i] {
        return true;
    }
    match horizon {
        Some(h) => h.is_sky_side(u, v) && seg.dynamic_confidence[i] == 0.0 && !has_depth,
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Vec2, Vec3};
    use proptest::prelude::*;

    #[test]
    fn bilinear_examples() {
        let f = [0.0f32, 0.0, 1.0, 1.0];
        assert_eq!(bilinear_sample(&f, 2, 2, 0.0, 1.0), 1.0);
        assert_eq!(bilinear_sample(&f, 2, 2, 1.0, 0.0), 0.0);
        assert_eq!(bilinear_sample(&f, 2, 2, 0.5, 0.5), 0.5);
        let g = [0.2f32, 0.4, 0.6, 0.8, 1.0, 0.0];
        assert_eq!(
            bilinear_sample(&g, 3, 2, -5.0, 0.0),
            bilinear_sample(&g, 3, 2, 0.0, 0.0)
        );
        assert_eq!(bilinear_sample(&g, 3, 2, 99.0, 99.0), 0.0);
    }

    #[test]
    fn edge_examples() {
        assert_eq!(edge_score(320.0, 240.0, 640, 480, 10.0, 40.0), 0.0);
        assert_eq!(edge_score(0.0, 240.0, 640, 480, 10.0, 40.0), 1.0);
        assert_eq!(edge_score(639.0, 240.0, 640, 480, 10.0, 40.0), 1.0);
        assert!((edge_score(25.0, 240.0, 640, 480, 10.0, 40.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn combine_examples() {
        let w = FilterWeights::default();
        let z = combine(0.0, 0.0, 0.0, 0.0, &w);
        assert_eq!((z.staticness, z.outlier), (1.0, false));
        let one = combine(1.0, 1.0, 1.0, 1.0, &w);
        assert_eq!(one.staticness, 0.0);
        assert!(one.outlier);
        let half = combine(1.0, 0.0, 0.0, 0.0, &w);
        assert_eq!(half.staticness, 0.5);
        assert!(!half.outlier, "a point exactly at the threshold survives");
    }

    #[test]
    fn score_point_reads_mask_ground_and_edge() {
        let w = FilterWeights::default();
        let mut seg = SegMask::empty(100, 100);
        for y in 40..60 {
            for x in 40..60 {
                let i = seg.index(x, y);
                seg.dynamic_confidence[i] = 1.0;
                seg.class_map[i] = 2;
            }
        }
        let plane = Plane::new(0.0, 1.0, 0.0, -1.5).unwrap();
        let p = PointObservation {
            track_id: 1,
            frame_id: 0,
            pixel: Vec2::new(50.0, 50.0),
            point3d: Some(Vec3::new(0.0, 1.5, 8.0)),
        };
        let s = score_point(&p, &seg, None, Some(&plane), &w);
        assert_eq!(s.s_seg, 1.0);
        assert_eq!(s.s_ground, 1.0);
        assert_eq!(s.s_motion, 0.0);
        assert!(s.s_edge >= 0.0);
        assert!(s.outlier);

        let q = PointObservation { point3d: None, ..p };
        assert_eq!(score_point(&q, &seg, None, Some(&plane), &w).s_ground, 0.0);
    }

    #[test]
    fn sky_examples() {
        let mut seg = SegMask::empty(64, 48);
        let i = seg.index(10, 5);
        seg.sky[i] = true;
        assert!(sky_test(10.0, 5.0, true, &seg, None));
        let horizon = HorizonLine {
            a: 0.0,
            b: 1.0,
            c: -24.0,
        };
        assert!(!sky_test(30.0, 40.0, false, &seg, Some(&horizon)));
        assert!(sky_test(30.0, 10.0, false, &seg, Some(&horizon)));
        assert!(!sky_test(30.0, 10.0, true, &seg, Some(&horizon)));
    }

    proptest! {
        #[test]
        fn staticness_is_monotone(s in proptest::array::uniform4(0.0..=1.0f64), k in 0usize..4, bump in 0.0..=1.0f64) {
            let w = FilterWeights::default();
            let a = combine(s[0], s[1], s[2], s[3], &w);
            let mut t = s;
            t[k] = (t[k] + bump).min(1.0);
            let b = combine(t[0], t[1], t[2], t[3], &w);
            prop_assert!(b.staticness <= a.staticness);
            prop_assert!(!(a.outlier && !b.outlier));
        }
    }
}
