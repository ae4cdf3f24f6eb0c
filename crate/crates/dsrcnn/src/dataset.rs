//! Dataset ingestion: a root directory holding `images/` and `masks/` with
//! filename-matched pairs. Images are 8-bit grayscale or RGB (PNG or PGM);
//! masks are 8-bit grayscale thresholded at 128 into binary. Unmatched or
//! inconsistent files are reported and skipped rather than failing the load.

use crate::error::{Error, Result};
use crate::map::{GroundTruthMask, SaliencyMap};
use crate::tensor::{Shape, Tensor};
use image::{DynamicImage, GrayImage, ImageReader};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Mask gray levels at or above this value count as salient.
pub const MASK_THRESHOLD: u8 = 128;

const ACCEPTED_EXTENSIONS: [&str; 3] = ["png", "pgm", "ppm"];

#[derive(Clone, Debug)]
pub struct DatasetPair {
    pub name: String,
    pub image: Tensor,
    pub mask: GroundTruthMask,
}

#[derive(Debug, Default)]
pub struct LoadedDataset {
    pub pairs: Vec<DatasetPair>,
    /// (file stem, reason) for every skipped entry.
    pub skipped: Vec<(String, String)>,
}

fn accepted(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| ACCEPTED_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Stem -> path map of the accepted image files in a directory, sorted by
/// stem so loading order is deterministic.
pub fn list_image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && accepted(&path) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.insert(stem.to_string(), path);
            }
        }
    }
    Ok(files)
}

/// Decode an image into a model input tensor with the requested channel
/// count. Grayscale sources are replicated across channels; color sources
/// collapse to luma when one channel is requested. Values are scaled to
/// [0, 1].
pub fn image_to_tensor(image: &DynamicImage, channels: usize) -> Result<Tensor> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    match channels {
        1 => {
            let gray = image.to_luma8();
            let data = gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            Tensor::from_vec(Shape::new(1, 1, h, w), data)
        }
        3 => {
            let rgb = image.to_rgb8();
            let mut data = vec![0.0; 3 * h * w];
            for (i, p) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    data[c * h * w + i] = p.0[c] as f64 / 255.0;
                }
            }
            Tensor::from_vec(Shape::new(1, 3, h, w), data)
        }
        other => Err(Error::Config(format!(
            "cannot build a {other}-channel input from an image file; use 1 or 3"
        ))),
    }
}

/// Threshold an 8-bit grayscale mask image into a binary mask.
pub fn mask_from_image(image: &DynamicImage) -> GroundTruthMask {
    let gray = image.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.pixels().map(|p| p.0[0] >= MASK_THRESHOLD).collect();
    GroundTruthMask::new(h, w, data).expect("dimensions from the decoder")
}

pub fn read_image(path: &Path) -> Result<DynamicImage> {
    Ok(ImageReader::open(path)?.decode()?)
}

/// Load an 8-bit grayscale image as a saliency map (values k/255).
pub fn load_saliency_map(path: &Path) -> Result<SaliencyMap> {
    let gray = read_image(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    SaliencyMap::new(
        h,
        w,
        gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
    )
}

/// Write a saliency map as an 8-bit grayscale PNG with round-half-up
/// quantization, so re-reading it yields exactly round(255 v) / 255.
pub fn save_saliency_png(map: &SaliencyMap, path: &Path) -> Result<()> {
    let (h, w) = map.dims();
    let mut img = GrayImage::new(w as u32, h as u32);
    for (i, p) in img.pixels_mut().enumerate() {
        p.0[0] = (map.data()[i] * 255.0).round() as u8;
    }
    img.save(path)?;
    Ok(())
}

/// Write a 1x3xHxW tensor with values in [0, 1] as an 8-bit RGB PNG.
pub fn save_rgb_png(image: &Tensor, path: &Path) -> Result<()> {
    let s = image.shape();
    if s.batch != 1 || s.channels != 3 {
        return Err(Error::shape("save_rgb_png", "1x3xHxW", s));
    }
    let plane = s.height * s.width;
    let mut img = image::RgbImage::new(s.width as u32, s.height as u32);
    for (i, p) in img.pixels_mut().enumerate() {
        for c in 0..3 {
            p.0[c] = (image.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    img.save(path)?;
    Ok(())
}

/// Write a binary mask as a 0/255 grayscale PNG.
pub fn save_mask_png(mask: &GroundTruthMask, path: &Path) -> Result<()> {
    let (h, w) = mask.dims();
    let mut img = GrayImage::new(w as u32, h as u32);
    for (i, p) in img.pixels_mut().enumerate() {
        p.0[0] = if mask.data()[i] { 255 } else { 0 };
    }
    img.save(path)?;
    Ok(())
}

/// Load the `images/` + `masks/` pairs under `root`.
pub fn load_dataset(root: &Path, input_channels: usize) -> Result<LoadedDataset> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    if !images_dir.is_dir() || !masks_dir.is_dir() {
        return Err(Error::Dataset(format!(
            "dataset root {} must contain images/ and masks/ directories",
            root.display()
        )));
    }

    let images = list_image_files(&images_dir)?;
    let mut masks = list_image_files(&masks_dir)?;
    let mut out = LoadedDataset::default();

    for (stem, image_path) in images {
        let Some(mask_path) = masks.remove(&stem) else {
            out.skipped.push((stem, "no matching mask".into()));
            continue;
        };
        let image = match read_image(&image_path) {
            Ok(i) => i,
            Err(e) => {
                out.skipped.push((stem, format!("unreadable image: {e}")));
                continue;
            }
        };
        let mask_img = match read_image(&mask_path) {
            Ok(i) => i,
            Err(e) => {
                out.skipped.push((stem, format!("unreadable mask: {e}")));
                continue;
            }
        };
        if image.width() != mask_img.width() || image.height() != mask_img.height() {
            out.skipped.push((
                stem,
                format!(
                    "image is {}x{} but mask is {}x{}",
                    image.height(),
                    image.width(),
                    mask_img.height(),
                    mask_img.width()
                ),
            ));
            continue;
        }
        let tensor = image_to_tensor(&image, input_channels)?;
        out.pairs.push(DatasetPair {
            name: stem,
            image: tensor,
            mask: mask_from_image(&mask_img),
        });
    }
    for (stem, _) in masks {
        out.skipped.push((stem, "no matching image".into()));
    }
    Ok(out)
}
