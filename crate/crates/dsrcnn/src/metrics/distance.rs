//! Exact Euclidean distance transform with nearest-pixel identity.
//!
//! Two-pass squared-distance algorithm: a column sweep finds each pixel's
//! nearest foreground row within its own column, then a row-wise lower
//! envelope of parabolas (Felzenszwalb-Huttenlocher) minimizes over columns.
//! Squared distances are integers represented exactly in f64, so the result
//! matches an all-pairs search bit for bit. Ties between equidistant
//! foreground pixels resolve to the smallest flat index, making the
//! nearest-pixel map canonical.

use crate::error::{Error, Result};
use crate::map::GroundTruthMask;

#[derive(Clone, Debug)]
pub struct DistanceTransform {
    height: usize,
    width: usize,
    /// Exact squared distance to the nearest foreground pixel.
    pub dist_sq: Vec<f64>,
    /// Flat index (y * width + x) of the nearest foreground pixel; ties go to
    /// the smallest index.
    pub nearest: Vec<usize>,
}

impl DistanceTransform {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Euclidean distance at (y, x).
    pub fn distance(&self, y: usize, x: usize) -> f64 {
        self.dist_sq[y * self.width + x].sqrt()
    }
}

pub fn distance_transform(mask: &GroundTruthMask) -> Result<DistanceTransform> {
    if mask.foreground_count() == 0 {
        return Err(Error::InvalidArgument(
            "distance transform needs at least one foreground pixel".into(),
        ));
    }
    let (h, w) = mask.dims();
    let sq = |d: usize| (d * d) as f64;

    // Pass 1: nearest foreground row within each column.
    let mut col_dist_sq = vec![f64::INFINITY; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if mask.get(y, x) {
                last = Some(y);
            }
            if let Some(r) = last {
                col_dist_sq[y * w + x] = sq(y - r);
            }
        }
        last = None;
        for y in (0..h).rev() {
            if mask.get(y, x) {
                last = Some(y);
            }
            if let Some(r) = last {
                let d = sq(r - y);
                if d < col_dist_sq[y * w + x] {
                    col_dist_sq[y * w + x] = d;
                }
            }
        }
    }

    // Pass 2: per row, minimize (x - x')^2 + col_dist_sq[y][x'] over x' via
    // the lower envelope of parabolas. Columns with no foreground carry an
    // infinite parabola and are skipped.
    let mut dist_sq = vec![0.0; h * w];
    let mut centers = vec![0usize; w];
    let mut bounds = vec![0.0f64; w + 1];
    for y in 0..h {
        let f = |x: usize| col_dist_sq[y * w + x];
        let mut k = 0usize;
        let mut started = false;
        for q in 0..w {
            if f(q).is_infinite() {
                continue;
            }
            if !started {
                centers[0] = q;
                bounds[0] = f64::NEG_INFINITY;
                bounds[1] = f64::INFINITY;
                started = true;
                continue;
            }
            loop {
                let p = centers[k];
                let s = ((f(q) + sq(q)) - (f(p) + sq(p))) / (2.0 * (q as f64 - p as f64));
                if s <= bounds[k] {
                    k -= 1;
                } else {
                    k += 1;
                    centers[k] = q;
                    bounds[k] = s;
                    bounds[k + 1] = f64::INFINITY;
                    break;
                }
            }
        }
        debug_assert!(started, "empty mask rejected above");
        let mut j = 0usize;
        for x in 0..w {
            while bounds[j + 1] < x as f64 {
                j += 1;
            }
            let c = centers[j];
            let dx = x.abs_diff(c);
            dist_sq[y * w + x] = sq(dx) + f(c);
        }
    }

    // Recover the canonical nearest pixel for each site by scanning the
    // integer circle of radius sqrt(dist_sq) in flat-index order.
    let mut nearest = vec![0usize; h * w];
    for y in 0..h {
        for x in 0..w {
            nearest[y * w + x] = canonical_nearest(mask, y, x, dist_sq[y * w + x] as u64);
        }
    }

    Ok(DistanceTransform {
        height: h,
        width: w,
        dist_sq,
        nearest,
    })
}

/// Smallest flat index among foreground pixels at exactly the given squared
/// distance from (y, x). The distance is attained by construction.
fn canonical_nearest(mask: &GroundTruthMask, y: usize, x: usize, dist_sq: u64) -> usize {
    let (h, w) = mask.dims();
    let radius = exact_isqrt_upper(dist_sq) as i64;
    let (yi, xi) = (y as i64, x as i64);
    for fy in (yi - radius).max(0)..=(yi + radius).min(h as i64 - 1) {
        let dy_sq = ((fy - yi) * (fy - yi)) as u64;
        if dy_sq > dist_sq {
            continue;
        }
        let rem = dist_sq - dy_sq;
        let dx = exact_isqrt(rem);
        let Some(dx) = dx else { continue };
        let dx = dx as i64;
        for fx in [xi - dx, xi + dx] {
            if fx >= 0 && fx < w as i64 && mask.get(fy as usize, fx as usize) {
                return fy as usize * w + fx as usize;
            }
            if dx == 0 {
                break;
            }
        }
    }
    unreachable!("distance transform produced a distance with no witness");
}

/// Exact integer square root when `v` is a perfect square.
fn exact_isqrt(v: u64) -> Option<u64> {
    let r = (v as f64).sqrt().round() as u64;
    (r.saturating_sub(1)..=r + 1).find(|cand| cand * cand == v)
}

/// Smallest integer r with r * r >= v.
fn exact_isqrt_upper(v: u64) -> u64 {
    let mut r = (v as f64).sqrt().ceil() as u64;
    while r * r < v {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= v {
        r -= 1;
    }
    r
}
