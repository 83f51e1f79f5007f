//! Detection post-processing: confidence gating, per-class NMS, mask
//! combination and morphological refinement into a [`SegMask`].
//!
//! Detections come from an external detector as JSON Lines; see
//! [`read_detections_jsonl`].

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("normalization std must be positive, got {0:?}")]
    NonPositiveStd([f64; 3]),
    #[error("image buffer has {got} values, expected {expected}")]
    ImageSize { expected: usize, got: usize },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("mask run-length encoding covers {got} pixels, expected {expected}")]
    RleLength { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-channel `(in − mean) / std` on an interleaved `H×W×3` buffer.
pub fn normalize_image(
    image: &[f64],
    mean: [f64; 3],
    std: [f64; 3],
) -> Result<Vec<f64>, MaskError> {
    if std.iter().any(|s| !(*s > 0.0)) {
        return Err(MaskError::NonPositiveStd(std));
    }
    if !image.len().is_multiple_of(3) {
        return Err(MaskError::ImageSize {
            expected: image.len() / 3 * 3,
            got: image.len(),
        });
    }
    Ok(image
        .iter()
        .enumerate()
        .map(|(i, v)| (v - mean[i % 3]) / std[i % 3])
        .collect())
}

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    FastDynamic,
    SlowDynamic,
    Static,
    Sky,
}

impl Category {
    pub fn is_dynamic(self) -> bool {
        matches!(self, Category::FastDynamic | Category::SlowDynamic)
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Maps detector class ids onto filtering categories.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPolicy {
    pub classes: BTreeMap<i32, Category>,
    /// Minimum detection confidence per category, indexed by [`Category`].
    pub thresholds: [f64; 4],
}

/// Class id used for sky detections by the default policy.
pub const SKY_CLASS_ID: i32 = 100;

impl Default for ClassPolicy {
    /// COCO ids: vehicles and cyclists move fast, people and animals slowly.
    fn default() -> Self {
        let mut classes = BTreeMap::new();
        for id in [1, 2, 3, 5, 6, 7] {
            classes.insert(id, Category::FastDynamic);
        }
        for id in [0, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23] {
            classes.insert(id, Category::SlowDynamic);
        }
        classes.insert(SKY_CLASS_ID, Category::Sky);
        Self {
            classes,
            thresholds: [0.0; 4],
        }
    }
}

impl ClassPolicy {
    /// Unknown ids resolve to [`Category::Static`] with a warning.
    pub fn resolve(&self, class_id: i32) -> Category {
        match self.classes.get(&class_id) {
            Some(c) => *c,
            None => {
                log::warn!("unknown class id {class_id}, treating as static");
                Category::Static
            }
        }
    }

    /// Category for a class id already present in a [`SegMask`]; no warning.
    pub fn category_of(&self, class_id: i32) -> Category {
        self.classes
            .get(&class_id)
            .copied()
            .unwrap_or(Category::Static)
    }

    pub fn threshold(&self, c: Category) -> f64 {
        self.thresholds[c.index()]
    }
}

/// Axis-aligned box `(x, y, w, h)` in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = ((self.x + self.w).min(other.x + other.w) - self.x.max(other.x)).max(0.0);
        let iy = ((self.y + self.h).min(other.y + other.h) - self.y.max(other.y)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// Clamps the box into `[0, width] × [0, height]`.
    pub fn clamped(&self, width: u32, height: u32) -> BBox {
        let x0 = self.x.clamp(0.0, width as f64);
        let y0 = self.y.clamp(0.0, height as f64);
        let x1 = (self.x + self.w).clamp(0.0, width as f64);
        let y1 = (self.y + self.h).clamp(0.0, height as f64);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DetectionMask {
    /// Bitmap anchored at `(floor(bbox.x), floor(bbox.y))`, row-major.
    Bitmap {
        width: u32,
        height: u32,
        data: Vec<bool>,
    },
    /// Full-frame row-major runs alternating background / foreground,
    /// starting with background.
    Rle(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRecord {
    pub frame_id: i64,
    pub class_id: i32,
    pub class_name: String,
    pub confidence: f64,
    pub bbox: BBox,
    pub mask: Option<DetectionMask>,
}

/// One line of the detection JSONL file.
#[derive(Serialize, Deserialize)]
struct DetectionLine {
    frame: i64,
    class_id: i32,
    class_name: String,
    conf: f64,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask_rle: Option<Vec<u32>>,
}

impl DetectionRecord {
    fn from_line(l: DetectionLine) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&l.conf) {
            return Err(format!("confidence {} outside [0, 1]", l.conf));
        }
        Ok(Self {
            frame_id: l.frame,
            class_id: l.class_id,
            class_name: l.class_name,
            confidence: l.conf,
            bbox: BBox::new(l.bbox[0], l.bbox[1], l.bbox[2], l.bbox[3]),
            mask: l.mask_rle.map(DetectionMask::Rle),
        })
    }

    fn to_line(&self) -> DetectionLine {
        DetectionLine {
            frame: self.frame_id,
            class_id: self.class_id,
            class_name: self.class_name.clone(),
            conf: self.confidence,
            bbox: [self.bbox.x, self.bbox.y, self.bbox.w, self.bbox.h],
            mask_rle: match &self.mask {
                Some(DetectionMask::Rle(r)) => Some(r.clone()),
                _ => None,
            },
        }
    }

    /// Linear indices of covered pixels in a `width × height` frame.
    fn covered_pixels(&self, width: u32, height: u32) -> Result<Vec<usize>, MaskError> {
        let (w, h) = (width as i64, height as i64);
        let mut out = Vec::new();
        match &self.mask {
            Some(DetectionMask::Rle(runs)) => {
                let total = (w * h) as usize;
                let mut pos = 0usize;
                for (k, run) in runs.iter().enumerate() {
                    let run = *run as usize;
                    if k % 2 == 1 {
                        out.extend(pos.min(total)..(pos + run).min(total));
                    }
                    pos += run;
                }
                if pos != total {
                    return Err(MaskError::RleLength {
                        expected: total,
                        got: pos,
                    });
                }
            }
            Some(DetectionMask::Bitmap {
                width: bw,
                height: bh,
                data,
            }) => {
                let ox = self.bbox.x.floor() as i64;
                let oy = self.bbox.y.floor() as i64;
                for r in 0..*bh as i64 {
                    for c in 0..*bw as i64 {
                        let (x, y) = (ox + c, oy + r);
                        if data[(r * *bw as i64 + c) as usize] && x >= 0 && y >= 0 && x < w && y < h
                        {
                            out.push((y * w + x) as usize);
                        }
                    }
                }
            }
            None => {
                let b = self.bbox.clamped(width, height);
                // pixel centers sit on integer coordinates
                let x0 = b.x.ceil() as i64;
                let x1 = (b.x + b.w).ceil() as i64;
                let y0 = b.y.ceil() as i64;
                let y1 = (b.y + b.h).ceil() as i64;
                for y in y0.max(0)..y1.min(h) {
                    for x in x0.max(0)..x1.min(w) {
                        out.push((y * w + x) as usize);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Encodes a full-frame binary mask as alternating background/foreground runs.
pub fn rle_encode(bits: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn read_detections_jsonl(path: &Path) -> Result<Vec<DetectionRecord>, MaskError> {
    let p = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| MaskError::Io {
        path: p.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| MaskError::Io {
            path: p.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DetectionLine = serde_json::from_str(&line).map_err(|e| MaskError::Parse {
            path: p.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(
            DetectionRecord::from_line(parsed).map_err(|msg| MaskError::Parse {
                path: p.clone(),
                line: i + 1,
                msg,
            })?,
        );
    }
    Ok(out)
}

pub fn write_detections_jsonl(path: &Path, dets: &[DetectionRecord]) -> Result<(), MaskError> {
    let p = path.display().to_string();
    let io = |source| MaskError::Io {
        path: p.clone(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for d in dets {
        let s = serde_json::to_string(&d.to_line()).expect("detection serializes");
        writeln!(w, "{s}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Keeps detections with `confidence ≥ θ`, preserving order.
pub fn filter_by_confidence(dets: &[DetectionRecord], theta: f64) -> Vec<DetectionRecord> {
    dets.iter()
        .filter(|d| d.confidence >= theta)
        .cloned()
        .collect()
}

/// Greedy non-maximum suppression.
///
/// Candidates are visited by descending confidence, ties in input order. A
/// candidate is dropped when its IoU with an already kept box exceeds `theta`;
/// with `per_class` only boxes of the same class suppress each other. The
/// survivors are returned in visiting order.
pub fn nms(dets: &[DetectionRecord], theta: f64, per_class: bool) -> Vec<DetectionRecord> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&k| {
            (!per_class || dets[k].class_id == dets[i].class_id)
                && dets[k].bbox.iou(&dets[i].bbox) > theta
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

/// Per-pixel dynamic confidence, winning class and sky flag.
#[derive(Clone, Debug, PartialEq)]
pub struct SegMask {
    pub width: u32,
    pub height: u32,
    pub dynamic_confidence: Vec<f32>,
    /// `0` is background.
    pub class_map: Vec<i32>,
    pub sky: Vec<bool>,
}

impl SegMask {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            dynamic_confidence: vec![0.0; n],
            class_map: vec![0; n],
            sky: vec![false; n],
        }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    /// Nearest pixel to a sub-pixel coordinate, clamped into the image.
    pub fn nearest(&self, u: f64, v: f64) -> usize {
        let x = u.round().clamp(0.0, self.width.saturating_sub(1) as f64) as u32;
        let y = v.round().clamp(0.0, self.height.saturating_sub(1) as f64) as u32;
        self.index(x, y)
    }

    pub fn confidence_at(&self, x: u32, y: u32) -> f32 {
        self.dynamic_confidence[self.index(x, y)]
    }

    pub fn binary(&self) -> Vec<bool> {
        self.dynamic_confidence.iter().map(|c| *c >= 0.5).collect()
    }

    /// Max-pools by an integer factor.
    pub fn downsample(&self, factor: u32) -> SegMask {
        if factor <= 1 {
            return self.clone();
        }
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        let mut out = SegMask::empty(w, h);
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.index(x, y);
                let dst = out.index(x / factor, y / factor);
                let c = self.dynamic_confidence[src];
                if c > out.dynamic_confidence[dst]
                    || (out.class_map[dst] == 0
                        && self.class_map[src] != 0
                        && c >= out.dynamic_confidence[dst])
                {
                    out.dynamic_confidence[dst] = c;
                    out.class_map[dst] = self.class_map[src];
                }
                out.sky[dst] |= self.sky[src];
            }
        }
        out
    }

    /// Nearest-neighbor upsampling back to `width × height`.
    pub fn upsample(&self, factor: u32, width: u32, height: u32) -> SegMask {
        if factor <= 1 {
            return self.clone();
        }
        let mut out = SegMask::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                let src = self.index(x / factor, y / factor);
                let dst = out.index(x, y);
                out.dynamic_confidence[dst] = self.dynamic_confidence[src];
                out.class_map[dst] = self.class_map[src];
                out.sky[dst] = self.sky[src];
            }
        }
        out
    }
}

/// Rasterizes detections into a [`SegMask`] with the per-pixel max rule.
///
/// A pixel's winner maximizes (dynamic contribution, raw confidence, lower
/// class id), so the result does not depend on detection order.
pub fn combine_masks(
    dets: &[DetectionRecord],
    policy: &ClassPolicy,
    width: u32,
    height: u32,
) -> Result<SegMask, MaskError> {
    let mut mask = SegMask::empty(width, height);
    let mut best_conf = vec![f32::NEG_INFINITY; mask.class_map.len()];
    for d in dets {
        let cat = policy.resolve(d.class_id);
        if d.confidence < policy.threshold(cat) {
            continue;
        }
        let conf = d.confidence as f32;
        let contrib = if cat.is_dynamic() { conf } else { 0.0 };
        for idx in d.covered_pixels(width, height)? {
            if cat == Category::Sky {
                mask.sky[idx] = true;
            }
            let cur = (
                mask.dynamic_confidence[idx],
                best_conf[idx],
                mask.class_map[idx],
            );
            let wins = contrib > cur.0
                || (contrib == cur.0 && (conf > cur.1 || (conf == cur.1 && d.class_id < cur.2)));
            if wins || best_conf[idx] == f32::NEG_INFINITY {
                mask.dynamic_confidence[idx] = contrib;
                best_conf[idx] = conf;
                mask.class_map[idx] = d.class_id;
            }
        }
    }
    Ok(mask)
}

fn erode_rows(src: &[bool], w: usize, h: usize, r: usize, fg: bool) -> Vec<bool> {
    // fg = true erodes foreground (min), fg = false dilates (max)
    let mut out = vec![false; src.len()];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            out[y * w + x] = if fg {
                row[lo..=hi].iter().all(|b| *b)
            } else {
                row[lo..=hi].iter().any(|b| *b)
            };
        }
    }
    out
}

fn erode_cols(src: &[bool], w: usize, h: usize, r: usize, fg: bool) -> Vec<bool> {
    // Row-major so the inner loop runs over contiguous memory.
    let mut out = vec![fg; src.len()];
    for y in 0..h {
        let row = &mut out[y * w..(y + 1) * w];
        for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
            let other = &src[yy * w..(yy + 1) * w];
            if fg {
                row.iter_mut().zip(other).for_each(|(o, b)| *o &= *b);
            } else {
                row.iter_mut().zip(other).for_each(|(o, b)| *o |= *b);
            }
        }
    }
    out
}

/// Square-window erosion; pixels outside the image are ignored.
pub fn erode(bits: &[bool], width: u32, height: u32, radius: u32) -> Vec<bool> {
    if radius == 0 || bits.is_empty() {
        return bits.to_vec();
    }
    let (w, h, r) = (width as usize, height as usize, radius as usize);
    erode_cols(&erode_rows(bits, w, h, r, true), w, h, r, true)
}

/// Square-window dilation; pixels outside the image are ignored.
pub fn dilate(bits: &[bool], width: u32, height: u32, radius: u32) -> Vec<bool> {
    if radius == 0 || bits.is_empty() {
        return bits.to_vec();
    }
    let (w, h, r) = (width as usize, height as usize, radius as usize);
    erode_cols(&erode_rows(bits, w, h, r, false), w, h, r, false)
}

/// Center-weighted 3×3 majority vote over the in-image neighborhood.
///
/// The center pixel counts twice and ties keep the current value, so convex
/// corners of solid regions survive while isolated pixels and unit holes flip.
pub fn majority3(bits: &[bool], width: u32, height: u32) -> Vec<bool> {
    let (w, h) = (width as usize, height as usize);
    let mut out = bits.to_vec();
    let mut col = vec![0u8; w];
    for y in 0..h {
        // Per-column sums over the in-image rows of the 3×3 window.
        let rows = y.saturating_sub(1)..=(y + 1).min(h - 1);
        let ny = rows.clone().count();
        col.iter_mut().for_each(|c| *c = 0);
        for yy in rows {
            for (c, b) in col.iter_mut().zip(&bits[yy * w..(yy + 1) * w]) {
                *c += u8::from(*b);
            }
        }
        for x in 0..w {
            let cols = x.saturating_sub(1)..=(x + 1).min(w - 1);
            let nx = cols.clone().count();
            let i = y * w + x;
            let on = cols.map(|xx| col[xx] as usize).sum::<usize>() + usize::from(bits[i]);
            let total = nx * ny + 1;
            if 2 * on > total {
                out[i] = true;
            } else if 2 * on < total {
                out[i] = false;
            }
        }
    }
    out
}

/// Upper bound on smoothing/morphology alternations in [`refine_mask`].
const REFINE_MAX_ROUNDS: usize = 16;

/// Cleans the dynamic support of a mask.
///
/// The support (`confidence ≥ 0.5`) goes through an opening, a closing and a
/// 3×3 majority vote; the three steps repeat until the support stops changing
/// so the result is a fixed point. Surviving original pixels keep their
/// confidence; pixels added by closing take the maximum confidence of their
/// 4-neighbors (or of the nearest ring of original support pixels).
pub fn refine_mask(mask: &SegMask, open_radius: u32, close_radius: u32) -> SegMask {
    let (w, h) = (mask.width, mask.height);
    let original = mask.binary();
    let step = |bits: &[bool]| {
        let opened = dilate(&erode(bits, w, h, open_radius), w, h, open_radius);
        let closed = erode(&dilate(&opened, w, h, close_radius), w, h, close_radius);
        majority3(&closed, w, h)
    };
    let mut support = step(&original);
    for _ in 0..REFINE_MAX_ROUNDS {
        let next = step(&support);
        if next == support {
            break;
        }
        support = next;
    }

    let mut out = mask.clone();
    let (wi, hi) = (w as i64, h as i64);
    let search = open_radius.max(close_radius) as i64 + 2;
    for y in 0..hi {
        for x in 0..wi {
            let i = (y * wi + x) as usize;
            if !support[i] {
                if original[i] || mask.dynamic_confidence[i] > 0.0 {
                    out.dynamic_confidence[i] = 0.0;
                    out.class_map[i] = 0;
                }
                continue;
            }
            if original[i] {
                continue;
            }
            let mut best: Option<(f32, i32)> = None;
            let consider = |xx: i64, yy: i64, best: &mut Option<(f32, i32)>| {
                if xx < 0 || yy < 0 || xx >= wi || yy >= hi {
                    return;
                }
                let j = (yy * wi + xx) as usize;
                if !original[j] {
                    return;
                }
                let cand = (mask.dynamic_confidence[j], mask.class_map[j]);
                let better = match best {
                    None => true,
                    Some(b) => cand.0 > b.0 || (cand.0 == b.0 && cand.1 < b.1),
                };
                if better {
                    *best = Some(cand);
                }
            };
            for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                consider(x + dx, y + dy, &mut best);
            }
            let mut ring = 1;
            while best.is_none() && ring <= search {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs() == ring || dy.abs() == ring {
                            consider(x + dx, y + dy, &mut best);
                        }
                    }
                }
                ring += 1;
            }
            match best {
                Some((c, cls)) => {
                    out.dynamic_confidence[i] = c;
                    out.class_map[i] = cls;
                }
                None => {
                    out.dynamic_confidence[i] = 0.0;
                }
            }
        }
    }
    out
}

/// Runs the whole post-processing chain for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskParams {
    pub conf_threshold: f64,
    pub nms_threshold: f64,
    pub nms_per_class: bool,
    pub open_radius: u32,
    pub close_radius: u32,
    /// Integer downsampling factor applied before morphology (1, 2 or 4).
    pub scale_divisor: u32,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            conf_threshold: 0.25,
            nms_threshold: 0.45,
            nms_per_class: true,
            open_radius: 1,
            close_radius: 1,
            scale_divisor: 1,
        }
    }
}

pub fn build_segmask(
    dets: &[DetectionRecord],
    policy: &ClassPolicy,
    params: &MaskParams,
    width: u32,
    height: u32,
) -> Result<SegMask, MaskError> {
    let kept = nms(
        &filter_by_confidence(dets, params.conf_threshold),
        params.nms_threshold,
        params.nms_per_class,
    );
    let combined = combine_masks(&kept, policy, width, height)?;
    if params.scale_divisor <= 1 {
        return Ok(refine_mask(
            &combined,
            params.open_radius,
            params.close_radius,
        ));
    }
    let f = params.scale_divisor;
    let small = refine_mask(
        &combined.downsample(f),
        params.open_radius.div_ceil(f),
        params.close_radius.div_ceil(f),
    );
    Ok(small.upsample(f, width, height))
}

/// Writes an 8-bit binary PGM (P5).
pub fn write_pgm(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<(), MaskError> {
    let p = path.display().to_string();
    let io = |source| MaskError::Io {
        path: p.clone(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    write!(f, "P5\n{width} {height}\n255\n").map_err(io)?;
    f.write_all(pixels).map_err(io)?;
    f.flush().map_err(io)
}

pub fn read_pgm(path: &Path) -> Result<(u32, u32, Vec<u8>), MaskError> {
    let p = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| MaskError::Io {
        path: p.clone(),
        source,
    })?;
    let bad = |msg: &str| MaskError::Parse {
        path: p.clone(),
        line: 1,
        msg: msg.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected an 8-bit P5 image"));
    }
    let w: u32 = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: u32 = fields[2].parse().map_err(|_| bad("bad height"))?;
    let data = bytes.get(pos + 1..).unwrap_or_default().to_vec();
    if data.len() != (w * h) as usize {
        return Err(bad("pixel data size does not match header"));
    }
    Ok((w, h, data))
}

/// Exports the binary support (255 = dynamic) and the confidence map.
pub fn export_mask_pgm(
    mask: &SegMask,
    binary_path: &Path,
    confidence_path: &Path,
) -> Result<(), MaskError> {
    let bin: Vec<u8> = mask
        .dynamic_confidence
        .iter()
        .map(|c| if *c >= 0.5 { 255 } else { 0 })
        .collect();
    let conf: Vec<u8> = mask
        .dynamic_confidence
        .iter()
        .map(|c| (255.0 * c.clamp(0.0, 1.0)).round() as u8)
        .collect();
    write_pgm(binary_path, mask.width, mask.height, &bin)?;
    write_pgm(confidence_path, mask.width, mask.height, &conf)
}
