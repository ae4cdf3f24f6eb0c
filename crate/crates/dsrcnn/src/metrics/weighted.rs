//! Weighted F-measure.
//!
//! Per-pixel errors are reweighted before forming precision and recall: a
//! background pixel first inherits the error of its nearest foreground pixel
//! (dependency), errors are smoothed with a normalized 7x7 Gaussian (sigma 5)
//! and foreground keeps the pixelwise min of raw and smoothed error, and
//! background errors are scaled by B = 2 - exp(ln(0.5)/5 * D) with D the
//! Euclidean distance to the foreground (importance decays away from the
//! object). Weighted true/false positives then combine as usual.

use crate::error::Result;
use crate::map::{GroundTruthMask, SaliencyMap};
use crate::metrics::distance::distance_transform;
use crate::metrics::f_measure;

pub const GAUSSIAN_SIDE: usize = 7;
pub const GAUSSIAN_SIGMA: f64 = 5.0;

/// Decay rate of background importance: weight halves every 5 pixels.
pub const IMPORTANCE_LN_HALF_PER: f64 = 5.0;

/// Normalized 7x7 Gaussian taps, row-major.
pub(crate) fn gaussian_kernel() -> [f64; GAUSSIAN_SIDE * GAUSSIAN_SIDE] {
    let mut k = [0.0; GAUSSIAN_SIDE * GAUSSIAN_SIDE];
    let c = (GAUSSIAN_SIDE / 2) as f64;
    let mut sum = 0.0;
    for (i, slot) in k.iter_mut().enumerate() {
        let dy = (i / GAUSSIAN_SIDE) as f64 - c;
        let dx = (i % GAUSSIAN_SIDE) as f64 - c;
        *slot = (-(dy * dy + dx * dx) / (2.0 * GAUSSIAN_SIGMA * GAUSSIAN_SIGMA)).exp();
        sum += *slot;
    }
    for slot in &mut k {
        *slot /= sum;
    }
    k
}

/// Zero-padded correlation with the 7x7 Gaussian.
fn smooth(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    let kernel = gaussian_kernel();
    let r = (GAUSSIAN_SIDE / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                let sy = y + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let sx = x + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let ki = ((dy + r) as usize) * GAUSSIAN_SIDE + (dx + r) as usize;
                    acc += kernel[ki] * values[sy as usize * w + sx as usize];
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

/// Weighted F-measure of a saliency map against a mask with non-empty
/// foreground (empty foreground leaves the metric undefined and is an error;
/// dataset evaluation reports such images as skipped).
pub fn weighted_f(map: &SaliencyMap, gt: &GroundTruthMask, beta_sq: f64) -> Result<f64> {
    if map.dims() != gt.dims() {
        return Err(crate::error::Error::ShapeMismatch {
            context: "weighted_f".into(),
            expected: format!("{}x{}", gt.height(), gt.width()),
            got: format!("{}x{}", map.height(), map.width()),
        });
    }
    let dt = distance_transform(gt)?;
    let (h, w) = gt.dims();
    let n = h * w;

    let error: Vec<f64> = (0..n)
        .map(|i| (map.data()[i] - if gt.data()[i] { 1.0 } else { 0.0 }).abs())
        .collect();

    // Background pixels inherit the error of their nearest foreground pixel.
    let mut dependent = error.clone();
    for i in 0..n {
        if !gt.data()[i] {
            dependent[i] = error[dt.nearest[i]];
        }
    }
    let smoothed = smooth(&dependent, h, w);

    // Foreground keeps the smaller of raw and smoothed error; background
    // keeps its raw error but decays in importance with distance.
    let mut fg_err_sum = 0.0;
    let mut bg_err_sum = 0.0;
    for i in 0..n {
        if gt.data()[i] {
            let e = if smoothed[i] < error[i] {
                smoothed[i]
            } else {
                error[i]
            };
            fg_err_sum += e;
        } else {
            let decay = (0.5f64.ln() / IMPORTANCE_LN_HALF_PER * dt.dist_sq[i].sqrt()).exp();
            bg_err_sum += error[i] * (2.0 - decay);
        }
    }

    let fg = gt.foreground_count() as f64;
    let tp_w = fg - fg_err_sum;
    let fp_w = bg_err_sum;
    let recall_w = tp_w / fg;
    let precision_w = if tp_w + fp_w > 0.0 {
        tp_w / (tp_w + fp_w)
    } else {
        0.0
    };
    Ok(f_measure(precision_w, recall_w.max(0.0), beta_sq))
}
