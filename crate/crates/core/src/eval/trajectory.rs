use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::geometry::{nearest_rotation, orthonormality_error, Mat3, Pose, Vec3};

use super::{ConfusionReport, ErrorStats, EvalError, ImprovementReport};

/// Largest deviation from orthonormality (or from a unit quaternion) that is
/// silently projected away on read.
pub const ROTATION_REPAIR_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryFormat {
    /// 12 values per line: row-major `[R | t]`.
    Kitti,
    /// `timestamp tx ty tz qx qy qz qw`.
    Tum,
}

impl FromStr for TrajectoryFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "kitti" => Ok(Self::Kitti),
            "tum" => Ok(Self::Tum),
            other => Err(format!(
                "unknown trajectory format '{other}' (expected kitti or tum)"
            )),
        }
    }
}

/// Camera-to-world poses in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub format: TrajectoryFormat,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>, format: TrajectoryFormat) -> Self {
        Self { poses, format }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

fn repaired_rotation(m: &Mat3) -> Option<Mat3> {
    let err = orthonormality_error(m);
    if err > ROTATION_REPAIR_TOL || m.determinant() <= 0.0 {
        return None;
    }
    Some(if err == 0.0 { *m } else { nearest_rotation(m) })
}

/// Parses trajectory text; `path` only labels error messages.
pub fn parse_trajectory(
    text: &str,
    format: TrajectoryFormat,
    path: &Path,
) -> Result<Trajectory, EvalError> {
    let parse_err = |line: usize, msg: String| EvalError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let invalid = |line: usize, msg: String| EvalError::Validation {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut poses: Vec<Pose> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("'{t}' is not a number")))
            })
            .collect::<Result<_, _>>()?;
        let expected = match format {
            TrajectoryFormat::Kitti => 12,
            TrajectoryFormat::Tum => 8,
        };
        if vals.len() != expected {
            return Err(parse_err(
                line_no,
                format!("expected {expected} fields, found {}", vals.len()),
            ));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line_no, "non-finite value".into()));
        }
        let pose = match format {
            TrajectoryFormat::Kitti => {
                let m = Mat3::new(
                    vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9],
                    vals[10],
                );
                let r = repaired_rotation(&m).ok_or_else(|| {
                    invalid(
                        line_no,
                        format!(
                            "rotation is not orthonormal (error {:.3e})",
                            orthonormality_error(&m)
                        ),
                    )
                })?;
                Pose {
                    rotation: r,
                    translation: Vec3::new(vals[3], vals[7], vals[11]),
                    timestamp: None,
                }
            }
            TrajectoryFormat::Tum => {
                let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
                if (q.norm() - 1.0).abs() > ROTATION_REPAIR_TOL {
                    return Err(invalid(
                        line_no,
                        format!("quaternion norm {} is not 1", q.norm()),
                    ));
                }
                let t = Vec3::new(vals[1], vals[2], vals[3]);
                Pose::from_quaternion(UnitQuaternion::from_quaternion(q), t)
                    .with_timestamp(Some(vals[0]))
            }
        };
        if let (Some(prev), Some(t)) = (poses.last().and_then(|p| p.timestamp), pose.timestamp) {
            if t <= prev {
                return Err(invalid(
                    line_no,
                    format!("timestamp {t} does not increase (previous {prev})"),
                ));
            }
        }
        poses.push(pose);
    }
    if poses.is_empty() {
        return Err(parse_err(0, "trajectory has no poses".into()));
    }
    Ok(Trajectory { poses, format })
}

pub fn read_trajectory(path: &Path, format: TrajectoryFormat) -> Result<Trajectory, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trajectory(&text, format, path)
}

/// Serializes with shortest round-trip float formatting. TUM output uses the
/// pose index as timestamp when a pose carries none.
pub fn format_trajectory(traj: &Trajectory, format: TrajectoryFormat) -> String {
    let mut out = String::new();
    for (i, p) in traj.poses.iter().enumerate() {
        let r = &p.rotation;
        let t = &p.translation;
        match format {
            TrajectoryFormat::Kitti => {
                let vals = [
                    r[(0, 0)],
                    r[(0, 1)],
                    r[(0, 2)],
                    t.x,
                    r[(1, 0)],
                    r[(1, 1)],
                    r[(1, 2)],
                    t.y,
                    r[(2, 0)],
                    r[(2, 1)],
                    r[(2, 2)],
                    t.z,
                ];
                let fields: Vec<String> = vals.iter().map(|v| format!("{v}")).collect();
                out.push_str(&fields.join(" "));
            }
            TrajectoryFormat::Tum => {
                let q = p.quaternion();
                let stamp = p.timestamp.unwrap_or(i as f64);
                let _ = write!(
                    out,
                    "{stamp} {} {} {} {} {} {} {}",
                    t.x, t.y, t.z, q.i, q.j, q.k, q.w
                );
            }
        }
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_trajectory(
    path: &Path,
    traj: &Trajectory,
    format: TrajectoryFormat,
) -> Result<(), EvalError> {
    write_file(path, &format_trajectory(traj, format))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

/// `metric,max,median,min,rmse`, one row per labeled statistic.
pub fn write_stats_csv(path: &Path, rows: &[(&str, ErrorStats)]) -> Result<(), EvalError> {
    let mut s = String::from("metric,max,median,min,rmse\n");
    for (name, st) in rows {
        let _ = writeln!(s, "{name},{},{},{},{}", st.max, st.median, st.min, st.rmse);
    }
    write_file(path, &s)
}

/// Reads the rows of a file written by [`write_stats_csv`].
pub fn parse_stats_csv(text: &str, path: &Path) -> Result<Vec<(String, ErrorStats)>, EvalError> {
    let err = |line: usize, msg: String| EvalError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "metric,max,median,min,rmse" => {}
        Some((i, h)) => {
            return Err(err(
                i + 1,
                format!("expected header metric,max,median,min,rmse, got {h:?}"),
            ))
        }
        None => return Err(err(0, "empty stats file".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(err(i + 1, format!("expected 5 fields, got {}", f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| err(i + 1, format!("{s:?}: {e}")))
        };
        let st = ErrorStats {
            max: num(f[1])?,
            median: num(f[2])?,
            min: num(f[3])?,
            rmse: num(f[4])?,
        };
        rows.push((f[0].to_string(), st));
    }
    if rows.is_empty() {
        return Err(err(1, "no statistics rows".into()));
    }
    Ok(rows)
}

pub fn read_stats_csv(path: &Path) -> Result<Vec<(String, ErrorStats)>, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_stats_csv(&text, path)
}

/// `index,error` per element, for external plotting.
pub fn write_error_csv(path: &Path, errors: &[f64]) -> Result<(), EvalError> {
    let mut s = String::from("index,error\n");
    for (i, e) in errors.iter().enumerate() {
        let _ = writeln!(s, "{i},{e}");
    }
    write_file(path, &s)
}

/// Undefined ratios are written as `NA`.
pub fn write_confusion_csv(path: &Path, r: &ConfusionReport) -> Result<(), EvalError> {
    let s = format!(
        "tp,fp,fn,tn,accuracy,precision,recall,f1\n{},{},{},{},{},{},{},{}\n",
        r.tp,
        r.fp,
        r.fn_,
        r.tn,
        opt(r.accuracy),
        opt(r.precision),
        opt(r.recall),
        opt(r.f1)
    );
    write_file(path, &s)
}

/// `field,baseline,ours,improvement_pct`; an undefined percentage is `NA`.
pub fn write_improvement_csv(
    path: &Path,
    baseline: &ErrorStats,
    ours: &ErrorStats,
    report: &ImprovementReport,
) -> Result<(), EvalError> {
    let mut s = String::from("field,baseline,ours,improvement_pct\n");
    for (((name, b), (_, o)), (_, pct)) in baseline
        .fields()
        .iter()
        .zip(ours.fields())
        .zip(report.fields())
    {
        let _ = writeln!(
            s,
            "{name},{b},{o},{}",
            opt(pct.map(|p| (p * 100.0).round() / 100.0))
        );
    }
    write_file(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem.txt")
    }

    #[test]
    fn stats_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let st = ErrorStats {
            max: 0.5,
            median: 0.2773,
            min: 0.0,
            rmse: 0.2814,
        };
        write_stats_csv(&path, &[("ape", st)]).unwrap();
        assert_eq!(
            read_stats_csv(&path).unwrap(),
            vec![("ape".to_string(), st)]
        );
        assert!(matches!(
            parse_stats_csv("metric,max\n", p()),
            Err(EvalError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_stats_csv("metric,max,median,min,rmse\nape,1,2,x,4\n", p()),
            Err(EvalError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn kitti_identity_line() {
        let t =
            parse_trajectory("1 0 0 0 0 1 0 0 0 0 1 0\n", TrajectoryFormat::Kitti, p()).unwrap();
        assert_eq!(t.poses[0].rotation, Mat3::identity());
        assert_eq!(t.poses[0].translation, Vec3::zeros());
    }

    #[test]
    fn tum_line() {
        let t =
            parse_trajectory("# header\n0.0 1 2 3 0 0 0 1\n", TrajectoryFormat::Tum, p()).unwrap();
        assert_eq!(t.poses[0].translation, Vec3::new(1.0, 2.0, 3.0));
        assert!((t.poses[0].rotation - Mat3::identity()).abs().max() < 1e-15);
        assert_eq!(t.poses[0].timestamp, Some(0.0));
    }

    #[test]
    fn malformed_lines_name_the_line() {
        let e = parse_trajectory(
            "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n",
            TrajectoryFormat::Kitti,
            p(),
        )
        .unwrap_err();
        match e {
            EvalError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(e_string("1 0 0 0 0 1 0 0 0 0 x 0").contains(":1:"));
        let bad_rot = parse_trajectory("1 0 0 0 0 2 0 0 0 0 1 0", TrajectoryFormat::Kitti, p());
        assert!(matches!(bad_rot, Err(EvalError::Validation { .. })));
        let bad_q = parse_trajectory("0 0 0 0 0 0 0 1.1", TrajectoryFormat::Tum, p());
        assert!(matches!(bad_q, Err(EvalError::Validation { .. })));
        let back = parse_trajectory(
            "1 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1",
            TrajectoryFormat::Tum,
            p(),
        );
        assert!(matches!(back, Err(EvalError::Validation { line: 2, .. })));
    }

    fn e_string(text: &str) -> String {
        parse_trajectory(text, TrajectoryFormat::Kitti, p())
            .unwrap_err()
            .to_string()
    }

    #[test]
    fn slightly_off_rotation_is_projected() {
        let t =
            parse_trajectory("1.0004 0 0 0 0 1 0 0 0 0 1 0", TrajectoryFormat::Kitti, p()).unwrap();
        assert!(orthonormality_error(&t.poses[0].rotation) < 1e-12);
    }

    #[test]
    fn format_parse() {
        assert_eq!(
            "KITTI".parse::<TrajectoryFormat>(),
            Ok(TrajectoryFormat::Kitti)
        );
        assert!("csv".parse::<TrajectoryFormat>().is_err());
    }

    proptest! {
        #[test]
        fn round_trip(angles in proptest::collection::vec((-3.0..3.0f64, -1.5..1.5f64, -3.0..3.0f64, -100.0..100.0f64), 1..10)) {
            let poses: Vec<Pose> = angles
                .iter()
                .enumerate()
                .map(|(i, (a, b, c, x))| {
                    Pose::from_rotation(Rotation3::from_euler_angles(*a, *b, *c), Vec3::new(*x, -x, 0.5 * x))
                        .with_timestamp(Some(i as f64 * 0.1))
                })
                .collect();
            let traj = Trajectory::new(poses, TrajectoryFormat::Tum);
            for fmt in [TrajectoryFormat::Kitti, TrajectoryFormat::Tum] {
                let back = parse_trajectory(&format_trajectory(&traj, fmt), fmt, p()).unwrap();
                for (a, b) in traj.poses.iter().zip(&back.poses) {
                    prop_assert!((a.rotation - b.rotation).abs().max() < 1e-9);
                    prop_assert!((a.translation - b.translation).norm() < 1e-9);
                }
            }
        }
    }
}
