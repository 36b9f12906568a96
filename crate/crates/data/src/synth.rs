//! Procedural "polyp on mucosa" images with exact masks.
//!
//! Each image is a low-frequency textured background with one wobbly ellipse
//! of a distinct, shaded colour. Everything is drawn from a ChaCha stream
//! seeded per image, so output bytes depend only on `(seed, index, size)`.

use std::f64::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::{load_manifest, DatasetManifest, Split};
use crate::{image_err, io_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub size: usize,
    /// Allowed blob area as a fraction of the image.
    pub min_area: f64,
    pub max_area: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { size: 64, min_area: 0.05, max_area: 0.40 }
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    wobble: f64,
    lobes: f64,
    phase: f64,
}

impl Blob {
    /// Normalized radius: inside when < 1.
    fn radius(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        let r = ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt();
        let theta = v.atan2(u);
        r / (1.0 + self.wobble * (self.lobes * theta + self.phase).sin())
    }
}

fn draw_blob(rng: &mut ChaCha8Rng, size: usize, cfg: &SynthConfig) -> (Blob, Vec<bool>) {
    let n = size as f64;
    let area = |m: &[bool]| m.iter().filter(|&&b| b).count() as f64 / (n * n);
    loop {
        let target = rng.gen_range(cfg.min_area + 0.03..cfg.max_area - 0.08);
        let aspect: f64 = rng.gen_range(0.6..1.0);
        // pi * rx * ry = target * n^2, ry = aspect * rx
        let rx = (target * n * n / (PI * aspect)).sqrt();
        let ry = aspect * rx;
        let margin = rx.max(ry) * 0.8;
        let blob = Blob {
            cy: rng.gen_range(margin..(n - margin).max(margin + 1.0)),
            cx: rng.gen_range(margin..(n - margin).max(margin + 1.0)),
            ry,
            rx,
            angle: rng.gen_range(0.0..PI),
            wobble: rng.gen_range(0.0..0.12),
            lobes: rng.gen_range(2..6) as f64,
            phase: rng.gen_range(0.0..2.0 * PI),
        };
        let mask: Vec<bool> = (0..size * size)
            .map(|i| blob.radius((i / size) as f64 + 0.5, (i % size) as f64 + 0.5) < 1.0)
            .collect();
        let a = area(&mask);
        if a >= cfg.min_area && a <= cfg.max_area {
            return (blob, mask);
        }
    }
}

/// One image and its mask as raw RGB / gray buffers.
pub fn synth_pair(seed: u64, index: usize, cfg: &SynthConfig) -> (RgbImage, GrayImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let size = cfg.size;
    let n = size as f64;
    let base = [rng.gen_range(150.0..200.0), rng.gen_range(80.0..120.0), rng.gen_range(70.0..110.0)];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0), rng.gen_range(0.0..2.0 * PI), rng.gen_range(8.0..20.0)))
        .collect();
    let tint = [rng.gen_range(215.0..245.0), rng.gen_range(140.0..175.0), rng.gen_range(50.0..90.0)];
    let (blob, mask) = draw_blob(&mut rng, size, cfg);
    let mut rgb = RgbImage::new(size as u32, size as u32);
    let mut gray = GrayImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 / n, x as f64 / n);
            let texture: f64 = waves.iter().map(|(ky, kx, p, amp)| amp * (2.0 * PI * (ky * fy + kx * fx) + p).sin()).sum();
            let noise = rng.gen_range(-6.0..6.0);
            let inside = mask[y * size + x];
            let px: [u8; 3] = std::array::from_fn(|c| {
                let v = if inside {
                    let r = blob.radius(y as f64 + 0.5, x as f64 + 0.5);
                    tint[c] * (1.05 - 0.25 * r) + 0.3 * texture
                } else {
                    base[c] + texture
                };
                (v + noise).clamp(0.0, 255.0) as u8
            });
            rgb.put_pixel(x as u32, y as u32, Rgb(px));
            gray.put_pixel(x as u32, y as u32, Luma([if inside { 255 } else { 0 }]));
        }
    }
    (rgb, gray)
}

/// Writes `n` synthetic pairs under `<root>/<name>/{images,masks}` as PNG
/// and returns the resulting training manifest.
pub fn synth_dataset(root: &Path, name: &str, n: usize, seed: u64, cfg: &SynthConfig) -> Result<DatasetManifest> {
    let base = root.join(name);
    for sub in ["images", "masks"] {
        let dir = base.join(sub);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    for i in 0..n {
        let (rgb, gray) = synth_pair(seed, i, cfg);
        let stem = format!("synth_{i:04}.png");
        let (ip, mp) = (base.join("images").join(&stem), base.join("masks").join(&stem));
        rgb.save(&ip).map_err(image_err(&ip))?;
        gray.save(&mp).map_err(image_err(&mp))?;
    }
    Ok(load_manifest(root, name)?.with_split(Split::Train))
}
