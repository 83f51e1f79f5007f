//! Text formats shared by the pipeline, the synthetic exporter and the CLI.
//!
//! * points file, one per frame: `track_id u v [X Y Z]`
//! * outlier file, one per frame: `track_id outlier(0|1) staticness s_seg s_motion s_ground s_edge`
//! * label file: `track_id frame_id gt_dynamic(0|1)`
//!
//! Per-frame files are named by zero-padded frame id (`000042.txt`). Blank
//! lines and `#` comments are skipped on read.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::filter::{FrameFilterResult, PointObservation};
use crate::geometry::{Vec2, Vec3};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn frame_file_name(frame_id: i64) -> String {
    format!("{frame_id:06}.txt")
}

/// `*.txt` files in `dir` whose stem is an integer, keyed by that frame id.
pub fn list_frame_files(dir: &Path) -> Result<BTreeMap<i64, PathBuf>, IoError> {
    list_numbered_files(dir, "txt")
}

/// Files in `dir` with extension `ext` whose stem is an integer, keyed by it.
pub fn list_numbered_files(dir: &Path, ext: &str) -> Result<BTreeMap<i64, PathBuf>, IoError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(id) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<i64>().ok())
        {
            out.insert(id, path);
        }
    }
    Ok(out)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i, l.split_whitespace().collect()))
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    tok: &str,
    what: &str,
) -> Result<T, IoError> {
    tok.parse().map_err(|_| IoError::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("invalid {what} '{tok}'"),
    })
}

fn flag(path: &Path, line: usize, tok: &str, what: &str) -> Result<bool, IoError> {
    match tok {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(IoError::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{what} must be 0 or 1, got '{tok}'"),
        }),
    }
}

pub fn parse_points(
    text: &str,
    frame_id: i64,
    path: &Path,
) -> Result<Vec<PointObservation>, IoError> {
    data_lines(text)
        .map(|(line, f)| {
            if f.len() != 3 && f.len() != 6 {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("expected 3 or 6 fields, found {}", f.len()),
                });
            }
            let num = |i: usize, what: &str| field::<f64>(path, line, f[i], what);
            let point3d = if f.len() == 6 {
                Some(Vec3::new(num(3, "X")?, num(4, "Y")?, num(5, "Z")?))
            } else {
                None
            };
            Ok(PointObservation {
                track_id: field(path, line, f[0], "track id")?,
                frame_id,
                pixel: Vec2::new(num(1, "u")?, num(2, "v")?),
                point3d,
            })
        })
        .collect()
}

pub fn read_points(path: &Path, frame_id: i64) -> Result<Vec<PointObservation>, IoError> {
    parse_points(&read_text(path)?, frame_id, path)
}

pub fn format_points(points: &[PointObservation]) -> String {
    let mut s = String::new();
    for p in points {
        let _ = write!(s, "{} {} {}", p.track_id, p.pixel.x, p.pixel.y);
        if let Some(x) = p.point3d {
            let _ = write!(s, " {} {} {}", x.x, x.y, x.z);
        }
        s.push('\n');
    }
    s
}

/// One line of an outlier file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutlierRow {
    pub track_id: i64,
    pub outlier: bool,
    pub staticness: f64,
    pub s_seg: f64,
    pub s_motion: f64,
    pub s_ground: f64,
    pub s_edge: f64,
}

/// Scores are written with six decimals so outputs diff cleanly.
pub fn format_outliers(points: &[PointObservation], result: &FrameFilterResult) -> String {
    let mut s = String::new();
    for ((p, sc), o) in points.iter().zip(&result.scores).zip(&result.outlier) {
        let _ = writeln!(
            s,
            "{} {} {:.6} {:.6} {:.6} {:.6} {:.6}",
            p.track_id,
            u8::from(*o),
            sc.staticness,
            sc.s_seg,
            sc.s_motion,
            sc.s_ground,
            sc.s_edge
        );
    }
    s
}

pub fn parse_outliers(text: &str, path: &Path) -> Result<Vec<OutlierRow>, IoError> {
    data_lines(text)
        .map(|(line, f)| {
            if f.len() != 7 {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("expected 7 fields, found {}", f.len()),
                });
            }
            let num = |i: usize, what: &str| field::<f64>(path, line, f[i], what);
            Ok(OutlierRow {
                track_id: field(path, line, f[0], "track id")?,
                outlier: flag(path, line, f[1], "outlier")?,
                staticness: num(2, "staticness")?,
                s_seg: num(3, "s_seg")?,
                s_motion: num(4, "s_motion")?,
                s_ground: num(5, "s_ground")?,
                s_edge: num(6, "s_edge")?,
            })
        })
        .collect()
}

pub fn read_outliers(path: &Path) -> Result<Vec<OutlierRow>, IoError> {
    parse_outliers(&read_text(path)?, path)
}

/// Ground-truth dynamic labels keyed by `(track_id, frame_id)`.
pub type Labels = BTreeMap<(i64, i64), bool>;

pub fn parse_labels(text: &str, path: &Path) -> Result<Labels, IoError> {
    let mut out = Labels::new();
    for (line, f) in data_lines(text) {
        if f.len() != 3 {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected 3 fields, found {}", f.len()),
            });
        }
        let key = (
            field(path, line, f[0], "track id")?,
            field(path, line, f[1], "frame id")?,
        );
        if out
            .insert(key, flag(path, line, f[2], "gt_dynamic")?)
            .is_some()
        {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("duplicate label for track {} in frame {}", key.0, key.1),
            });
        }
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Labels, IoError> {
    parse_labels(&read_text(path)?, path)
}

/// Lines sorted by frame, then track.
pub fn format_labels(labels: &Labels) -> String {
    let mut rows: Vec<_> = labels.iter().map(|(&(t, f), &d)| (f, t, d)).collect();
    rows.sort_unstable();
    rows.iter().fold(String::new(), |mut s, (f, t, d)| {
        let _ = writeln!(s, "{t} {f} {}", u8::from(*d));
        s
    })
}
