use crate::geometry::Vec2;

/// Single-channel row-major image with clamped access.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Self {
        assert_eq!(
            data.len(),
            width as usize * height as usize,
            "image buffer size mismatch"
        );
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f32) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    /// Pixel value with coordinates clamped into the image.
    pub fn at(&self, x: i64, y: i64) -> f32 {
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[y * self.width as usize + x]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockMatch {
    pub dx: i32,
    pub dy: i32,
    /// Set when the reference patch has no texture to match against.
    pub low_confidence: bool,
}

/// Integer displacement of the patch around `center` from `prev` to `next`.
///
/// Exhaustive SSD search over `±search` pixels. Among equal costs the smaller
/// `dx² + dy²` wins, then the lexicographically smaller `(dx, dy)`. A flat
/// reference patch yields `(0, 0)` flagged as low confidence.
pub fn block_match_displacement(
    prev: &GrayImage,
    next: &GrayImage,
    center: Vec2,
    patch_half: u32,
    search: u32,
) -> BlockMatch {
    let cx = center.x.round() as i64;
    let cy = center.y.round() as i64;
    let r = patch_half as i64;
    let reference: Vec<f32> = (-r..=r)
        .flat_map(|y| (-r..=r).map(move |x| (x, y)))
        .map(|(x, y)| prev.at(cx + x, cy + y))
        .collect();
    let mean = reference.iter().map(|&v| v as f64).sum::<f64>() / reference.len() as f64;
    let var = reference
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>();
    if var <= 1e-12 {
        return BlockMatch {
            dx: 0,
            dy: 0,
            low_confidence: true,
        };
    }

    let s = search as i64;
    let mut best: Option<(f64, i64, i64, i64)> = None;
    for dx in -s..=s {
        for dy in -s..=s {
            let mut ssd = 0.0f64;
            let mut k = 0;
            for y in -r..=r {
                for x in -r..=r {
                    let d = next.at(cx + dx + x, cy + dy + y) as f64 - reference[k] as f64;
                    ssd += d * d;
                    k += 1;
                }
            }
            let key = (ssd, dx * dx + dy * dy, dx, dy);
            let better = match best {
                None => true,
                Some(b) => key.0 < b.0 || (key.0 == b.0 && (key.1, key.2, key.3) < (b.1, b.2, b.3)),
            };
            if better {
                best = Some(key);
            }
        }
    }
    let (_, _, dx, dy) = best.expect("search window is never empty");
    BlockMatch {
        dx: dx as i32,
        dy: dy as i32,
        low_confidence: false,
    }
}
