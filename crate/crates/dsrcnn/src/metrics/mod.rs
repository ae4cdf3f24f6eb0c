//! Saliency evaluation protocol: PR curves over a fixed threshold grid,
//! F-measure, adaptive binarization via Otsu's threshold, mean absolute
//! error, and the weighted F-measure.

pub mod distance;
pub mod weighted;

pub use distance::{distance_transform, DistanceTransform};
pub use weighted::weighted_f;

use crate::error::{Error, Result};
use crate::map::{GroundTruthMask, SaliencyMap};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// beta^2 for the thresholded F-measure (field-standard 0.3).
    pub beta_sq: f64,
    /// beta^2 inside the weighted F-measure (1.0 per its definition).
    pub wfb_beta_sq: f64,
    /// Number of PR thresholds; the grid is (i + 0.5) / thresholds, the bin
    /// boundaries between consecutive 8-bit gray levels. A threshold never
    /// lands on a quantized map value, and a prediction equal to its binary
    /// ground truth scores F = 1 at every threshold.
    pub thresholds: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            beta_sq: 0.3,
            wfb_beta_sq: 1.0,
            thresholds: 256,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds < 2 {
            return Err(Error::Config(format!(
                "threshold count must be at least 2, got {}",
                self.thresholds
            )));
        }
        if self.beta_sq < 0.0 || self.wfb_beta_sq < 0.0 {
            return Err(Error::Config("beta^2 must be non-negative".into()));
        }
        Ok(())
    }

    pub fn threshold_grid(&self) -> Vec<f64> {
        (0..self.thresholds)
            .map(|i| (i as f64 + 0.5) / self.thresholds as f64)
            .collect()
    }
}

/// Pixel-count precision and recall of a binary prediction.
///
/// Degenerate cases: with no predicted positives, precision is 1 if the
/// ground truth is also empty and 0 otherwise; recall is 1 whenever the
/// ground truth is empty.
pub fn precision_recall(pred: &GroundTruthMask, gt: &GroundTruthMask) -> Result<(f64, f64)> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch {
            context: "precision_recall".into(),
            expected: format!("{}x{}", gt.height(), gt.width()),
            got: format!("{}x{}", pred.height(), pred.width()),
        });
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 {
        if tp + fn_ == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Ok((precision, recall))
}

/// (1 + beta^2) P R / (beta^2 P + R), defined as 0 when the denominator is 0.
pub fn f_measure(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let denom = beta_sq * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta_sq) * precision * recall / denom
    }
}

const OTSU_LEVELS: usize = 256;

/// Quantization level of a saliency value, matching the 8-bit round-half-up
/// convention used when maps are written as PNGs.
fn otsu_level(v: f64) -> usize {
    ((v * 255.0).round() as usize).min(255)
}

/// Otsu's adaptive threshold over a 256-level histogram: the split between
/// levels t and t+1 maximizing the between-class variance w0*w1*(mu0-mu1)^2,
/// ties broken toward the lower threshold. The returned real threshold is the
/// bin boundary (t + 0.5)/255, so binarizing at it separates the classes. A
/// constant map is degenerate; its own lower bin boundary is returned, which
/// makes the whole map binarize to foreground.
pub fn otsu_threshold(map: &SaliencyMap) -> f64 {
    let mut histogram = [0usize; OTSU_LEVELS];
    for &v in map.data() {
        histogram[otsu_level(v)] += 1;
    }
    let total = map.data().len() as f64;
    let total_sum: f64 = histogram
        .iter()
        .enumerate()
        .map(|(level, &count)| level as f64 * count as f64)
        .sum();

    let occupied: Vec<usize> = (0..OTSU_LEVELS).filter(|&l| histogram[l] > 0).collect();
    if occupied.len() == 1 {
        return ((occupied[0] as f64 - 0.5) / 255.0).clamp(0.0, 1.0);
    }

    let mut best_t = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    let mut weight0 = 0.0;
    let mut sum0 = 0.0;
    for (t, &count) in histogram.iter().enumerate().take(OTSU_LEVELS - 1) {
        weight0 += count as f64;
        sum0 += (t * count) as f64;
        let weight1 = total - weight0;
        if weight0 == 0.0 || weight1 == 0.0 {
            continue;
        }
        let mean0 = sum0 / weight0;
        let mean1 = (total_sum - sum0) / weight1;
        let var = weight0 * weight1 * (mean0 - mean1) * (mean0 - mean1);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }
    (best_t as f64 + 0.5) / 255.0
}

/// Mean absolute per-pixel difference between a map and a binary mask.
pub fn mae(map: &SaliencyMap, gt: &GroundTruthMask) -> Result<f64> {
    if map.dims() != gt.dims() {
        return Err(Error::ShapeMismatch {
            context: "mae".into(),
            expected: format!("{}x{}", gt.height(), gt.width()),
            got: format!("{}x{}", map.height(), map.width()),
        });
    }
    let sum: f64 = map
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&v, &g)| (v - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(sum / map.data().len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrCurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Dataset PR curve: per-image precision/recall averaged at each threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrCurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub name: String,
    /// F-measure averaged over the whole threshold grid.
    pub mean_f: f64,
    /// Otsu threshold used for the adaptive metrics.
    pub adaptive_threshold: f64,
    pub adaptive_precision: f64,
    pub adaptive_recall: f64,
    pub adaptive_f: f64,
    pub mae: f64,
    /// None when the ground truth has no foreground (metric undefined).
    pub weighted_f: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub images: usize,
    pub mean_f: f64,
    pub adaptive_precision: f64,
    pub adaptive_recall: f64,
    pub adaptive_f: f64,
    pub mae: f64,
    /// Mean over images where the metric is defined.
    pub weighted_f: Option<f64>,
    pub weighted_f_skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RejectedPair {
    pub name: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub config: MetricsConfig,
    pub per_image: Vec<ImageMetrics>,
    pub summary: DatasetSummary,
    pub pr_curve: PrCurve,
    pub rejected: Vec<RejectedPair>,
}

/// One named prediction/ground-truth pair for dataset evaluation.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub name: String,
    pub map: SaliencyMap,
    pub gt: GroundTruthMask,
}

/// Evaluate a dataset of prediction/mask pairs.
///
/// Mismatched pairs are rejected by name rather than failing the run. All
/// reductions are fixed-order (input order), so a given pair list always
/// produces bit-identical means.
pub fn evaluate_dataset(pairs: &[EvalPair], config: &MetricsConfig) -> Result<MetricsReport> {
    config.validate()?;
    let grid = config.threshold_grid();
    let mut rejected = Vec::new();
    let mut per_image = Vec::new();
    let mut curve_acc = vec![(0.0f64, 0.0f64); grid.len()];

    for pair in pairs {
        if pair.map.dims() != pair.gt.dims() {
            rejected.push(RejectedPair {
                name: pair.name.clone(),
                reason: format!(
                    "prediction is {}x{} but mask is {}x{}",
                    pair.map.height(),
                    pair.map.width(),
                    pair.gt.height(),
                    pair.gt.width()
                ),
            });
            continue;
        }

        let mut f_sum = 0.0;
        for (i, &t) in grid.iter().enumerate() {
            let (p, r) = precision_recall(&pair.map.binarize_at(t), &pair.gt)?;
            curve_acc[i].0 += p;
            curve_acc[i].1 += r;
            f_sum += f_measure(p, r, config.beta_sq);
        }

        let adaptive_threshold = otsu_threshold(&pair.map);
        let (ap, ar) = precision_recall(&pair.map.binarize_at(adaptive_threshold), &pair.gt)?;
        let weighted = if pair.gt.foreground_count() == 0 {
            None
        } else {
            Some(weighted_f(&pair.map, &pair.gt, config.wfb_beta_sq)?)
        };

        per_image.push(ImageMetrics {
            name: pair.name.clone(),
            mean_f: f_sum / grid.len() as f64,
            adaptive_threshold,
            adaptive_precision: ap,
            adaptive_recall: ar,
            adaptive_f: f_measure(ap, ar, config.beta_sq),
            mae: mae(&pair.map, &pair.gt)?,
            weighted_f: weighted,
        });
    }

    if per_image.is_empty() {
        return Err(Error::Dataset(
            "no evaluable pairs (empty input or all pairs rejected)".into(),
        ));
    }

    let n = per_image.len() as f64;
    let mean = |f: &dyn Fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    let defined: Vec<f64> = per_image.iter().filter_map(|m| m.weighted_f).collect();
    let summary = DatasetSummary {
        images: per_image.len(),
        mean_f: mean(&|m| m.mean_f),
        adaptive_precision: mean(&|m| m.adaptive_precision),
        adaptive_recall: mean(&|m| m.adaptive_recall),
        adaptive_f: mean(&|m| m.adaptive_f),
        mae: mean(&|m| m.mae),
        weighted_f: if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        },
        weighted_f_skipped: per_image.len() - defined.len(),
    };

    let points = grid
        .iter()
        .zip(&curve_acc)
        .map(|(&threshold, &(p, r))| PrCurvePoint {
            threshold,
            precision: p / n,
            recall: r / n,
        })
        .collect();

    Ok(MetricsReport {
        config: *config,
        per_image,
        summary,
        pr_curve: PrCurve { points },
        rejected,
    })
}
