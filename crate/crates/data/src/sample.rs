//! Loading a pair into a fixed-size normalized image and binary mask.

use image::imageops::{self, FilterType};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::Pair;
use crate::{image_err, Error, Result};

/// Per-channel RGB statistics applied after scaling pixels to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    /// ImageNet channel statistics.
    fn default() -> Self {
        Self { mean: [0.485, 0.456, 0.406], std: [0.229, 0.224, 0.225] }
    }
}

impl Normalization {
    pub fn apply(&self, channel: usize, v: f32) -> f32 {
        (v - self.mean[channel]) / self.std[channel]
    }

    /// Normalized value of a black pixel in `channel`.
    pub fn black(&self, channel: usize) -> f32 {
        self.apply(channel, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub image_size: usize,
    pub scales: Vec<f64>,
    pub normalization: Normalization,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { image_size: 352, scales: vec![0.75, 1.0, 1.25], normalization: Normalization::default() }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 || !self.image_size.is_multiple_of(32) {
            return Err(Error::Invalid(format!("image_size {} is not a positive multiple of 32", self.image_size)));
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Invalid(format!("scales must be non-empty and positive, got {:?}", self.scales)));
        }
        if self.normalization.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Invalid("normalization std must be positive".into()));
        }
        Ok(())
    }
}

/// Side length for `base * scale`, rounded then floored to a multiple of 32 (at least 32).
pub fn scaled_size(base: usize, scale: f64) -> usize {
    let raw = (base as f64 * scale).round() as usize;
    (raw / 32 * 32).max(32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub stem: String,
    pub source: String,
    /// Native `(height, width)` before resizing.
    pub original: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(3, H, W)` normalized RGB.
    pub image: Array3<f32>,
    /// `(H, W)` with values in {0, 1}.
    pub mask: Array2<f32>,
    pub meta: SampleMeta,
    pub normalization: Normalization,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        self.mask.dim()
    }
}

/// Reads and resizes one pair. Training accepts any configured scale; test
/// mode requires `scale == 1`.
pub fn make_sample(pair: &Pair, train: bool, scale: f64, cfg: &SampleConfig, source: &str) -> Result<Sample> {
    if !train && scale != 1.0 {
        return Err(Error::Invalid(format!("test-mode samples use scale 1, got {scale}")));
    }
    if train && !cfg.scales.contains(&scale) {
        return Err(Error::Invalid(format!("scale {scale} is not one of {:?}", cfg.scales)));
    }
    let side = scaled_size(cfg.image_size, scale) as u32;
    let rgb = image::open(&pair.image).map_err(image_err(&pair.image))?.to_rgb8();
    let gray = image::open(&pair.mask).map_err(image_err(&pair.mask))?.to_luma8();
    let original = (rgb.height() as usize, rgb.width() as usize);
    if gray.dimensions() != rgb.dimensions() {
        log::warn!(
            "{}: mask is {:?}, image is {:?}; both resized to {side}",
            pair.stem,
            gray.dimensions(),
            rgb.dimensions()
        );
    }
    let rgb = imageops::resize(&rgb, side, side, FilterType::Triangle);
    let gray = imageops::resize(&gray, side, side, FilterType::Triangle);
    let norm = cfg.normalization;
    let s = side as usize;
    let image = Array3::from_shape_fn((3, s, s), |(c, y, x)| {
        norm.apply(c, rgb.get_pixel(x as u32, y as u32)[c] as f32 / 255.0)
    });
    let max = gray.pixels().map(|p| p[0]).max().unwrap_or(0) as f32;
    let mask = Array2::from_shape_fn((s, s), |(y, x)| {
        let v = gray.get_pixel(x as u32, y as u32)[0] as f32;
        if max > 0.0 && v > 0.5 * max {
            1.0
        } else {
            0.0
        }
    });
    Ok(Sample {
        image,
        mask,
        meta: SampleMeta { stem: pair.stem.clone(), source: source.to_string(), original },
        normalization: norm,
    })
}

/// Samples stacked row-major as `(B, 3, H, W)` images and `(B, 1, H, W)` masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Vec<f32>,
    pub masks: Vec<f32>,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

pub fn collate(samples: &[Sample]) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (height, width) = first.size();
    let mut images = Vec::with_capacity(samples.len() * 3 * height * width);
    let mut masks = Vec::with_capacity(samples.len() * height * width);
    for s in samples {
        if s.size() != (height, width) {
            return Err(Error::Invalid(format!("batch mixes sizes {:?} and {:?}", (height, width), s.size())));
        }
        images.extend(s.image.iter());
        masks.extend(s.mask.iter());
    }
    Ok(Batch { images, masks, batch: samples.len(), height, width })
}

/// Seeded stream of per-iteration training scales, uniform over the choices.
#[derive(Debug, Clone)]
pub struct ScaleSampler {
    rng: ChaCha8Rng,
    scales: Vec<f64>,
}

impl ScaleSampler {
    pub fn new(scales: Vec<f64>, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), scales }
    }

    pub fn next_scale(&mut self) -> f64 {
        self.scales[self.rng.gen_range(0..self.scales.len())]
    }
}
