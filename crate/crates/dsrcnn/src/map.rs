//! Single-channel saliency maps and binary ground-truth masks.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Real-valued per-pixel saliency scores in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<SaliencyMap> {
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "saliency map data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "saliency map values must be finite and within [0, 1]".into(),
            ));
        }
        Ok(SaliencyMap {
            height,
            width,
            data,
        })
    }

    /// View a 1x1xHxW tensor (e.g. a sigmoid output) as a saliency map.
    pub fn from_tensor(t: &Tensor) -> Result<SaliencyMap> {
        let s = t.shape();
        if s.batch != 1 || s.channels != 1 {
            return Err(Error::shape("SaliencyMap::from_tensor", "1x1xHxW", s));
        }
        SaliencyMap::new(s.height, s.width, t.data().to_vec())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            Shape::new(1, 1, self.height, self.width),
            self.data.clone(),
        )
        .expect("dims validated at construction")
    }

    /// Threshold into a binary mask: pixel >= threshold becomes foreground.
    pub fn binarize_at(&self, threshold: f64) -> GroundTruthMask {
        GroundTruthMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v >= threshold).collect(),
        }
    }
}

/// Binary per-pixel labels; true marks a salient (foreground) pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl GroundTruthMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<GroundTruthMask> {
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "mask data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(GroundTruthMask {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// 1.0 / 0.0 values at the mask's geometry.
    pub fn to_map(&self) -> SaliencyMap {
        SaliencyMap {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&v| if v { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}
