//! Per-image score vectors, dataset aggregation and report formatting.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::froc::{froc_curve, image_detections, Detections, FrocPoint};
use crate::{dice_iou_sweep, emeasure, mae, smeasure, weighted_fmeasure, Error, Result};

/// The seven reported numbers, in table column order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ScoreVector {
    pub mDic: f64,
    pub mIoU: f64,
    pub wfm: f64,
    pub smeasure: f64,
    pub mEm: f64,
    pub maxEm: f64,
    pub mae: f64,
}

impl ScoreVector {
    pub const COLUMNS: [&'static str; 7] = ["mDic", "mIoU", "F^w_b", "S_a", "mE_x", "maxE_x", "MAE"];

    pub fn to_array(&self) -> [f64; 7] {
        [self.mDic, self.mIoU, self.wfm, self.smeasure, self.mEm, self.maxEm, self.mae]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        ScoreVector { mDic: v[0], mIoU: v[1], wfm: v[2], smeasure: v[3], mEm: v[4], maxEm: v[5], mae: v[6] }
    }
}

pub fn score_image(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<ScoreVector> {
    let (dice, iou) = dice_iou_sweep(pred, gt)?;
    let (mean_em, max_em) = emeasure(pred, gt)?;
    Ok(ScoreVector {
        mDic: dice,
        mIoU: iou,
        wfm: weighted_fmeasure(pred, gt)?,
        smeasure: smeasure(pred, gt)?,
        mEm: mean_em,
        maxEm: max_em,
        mae: mae(pred, gt)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    pub scores: ScoreVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct DatasetScores {
    pub dataset: String,
    pub per_image: Vec<ImageScore>,
    pub mean: ScoreVector,
    /// Sample standard deviation of per-image mDic; 0 for fewer than two images.
    pub std_mDic: f64,
    pub missing: Vec<String>,
    pub complete: bool,
    pub froc: Vec<FrocPoint>,
}

/// Means, mDic deviation and completeness from per-image results.
pub fn aggregate(dataset: &str, per_image: Vec<ImageScore>, missing: Vec<String>, froc: Vec<FrocPoint>) -> DatasetScores {
    let n = per_image.len();
    let mut sums = [0.0; 7];
    for s in &per_image {
        for (acc, v) in sums.iter_mut().zip(s.scores.to_array()) {
            *acc += v;
        }
    }
    let mean = if n == 0 {
        ScoreVector::default()
    } else {
        ScoreVector::from_array(sums.map(|v| v / n as f64))
    };
    let std = if n < 2 {
        0.0
    } else {
        let var = per_image.iter().map(|s| (s.scores.mDic - mean.mDic).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt()
    };
    DatasetScores {
        dataset: dataset.to_string(),
        per_image,
        mean,
        std_mDic: std,
        complete: missing.is_empty(),
        missing,
        froc,
    }
}

/// Maps raw network output into `[0, 1]`. Maps already inside the range pass
/// through; anything else is min-max scaled, and a constant map becomes 0.
pub fn normalize_prediction(raw: &Array2<f64>) -> Array2<f64> {
    if raw.iter().all(|v| (0.0..=1.0).contains(v)) {
        return raw.clone();
    }
    let lo = raw.iter().cloned().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Array2::zeros(raw.dim());
    }
    raw.mapv(|v| if v.is_nan() { 0.0 } else { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) })
}

/// Source coordinates and weights for half-pixel bilinear sampling along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let x = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let x0 = (x.floor() as usize).min(src - 1);
            let x1 = (x0 + 1).min(src - 1);
            (x0, x1, x - x0 as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers (no corner alignment).
pub fn resize_bilinear(map: ArrayView2<f64>, height: usize, width: usize) -> Array2<f64> {
    let (h, w) = map.dim();
    if (h, w) == (height, width) {
        return map.to_owned();
    }
    let rows = axis_taps(h, height);
    let cols = axis_taps(w, width);
    Array2::from_shape_fn((height, width), |(r, c)| {
        let (r0, r1, fr) = rows[r];
        let (c0, c1, fc) = cols[c];
        let top = map[(r0, c0)] * (1.0 - fc) + map[(r0, c1)] * fc;
        let bottom = map[(r1, c0)] * (1.0 - fc) + map[(r1, c1)] * fc;
        top * (1.0 - fr) + bottom * fr
    })
}

/// One scored image plus its detection counts for the FROC curve.
pub type ScoredImage = (ImageScore, Vec<Detections>);

/// Normalizes and resizes `pred` to the mask resolution, then scores it.
pub fn score_pair(name: String, pred: &Array2<f64>, gt: &Array2<bool>) -> Result<ScoredImage> {
    let (h, w) = gt.dim();
    let pred = resize_bilinear(normalize_prediction(pred).view(), h, w);
    let scores = score_image(pred.view(), gt.view())?;
    let det = image_detections(pred.view(), gt.view())?;
    Ok((ImageScore { name, scores }, det))
}

/// Aggregates scored images into dataset means, deviation and FROC curve.
pub fn finish(dataset: &str, scored: Vec<ScoredImage>, missing: Vec<String>) -> DatasetScores {
    let (per_image, det): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
    if !missing.is_empty() {
        log::warn!("{dataset}: {} image(s) without a pair: {}", missing.len(), missing.join(", "));
    }
    aggregate(dataset, per_image, missing, froc_curve(&det))
}

/// Scores in-memory `(name, prediction, mask)` triples in parallel. Predictions
/// are normalized and resized to the mask resolution first.
pub fn score_maps(dataset: &str, items: Vec<(String, Array2<f64>, Array2<bool>)>, missing: Vec<String>) -> Result<DatasetScores> {
    let scored: Vec<ScoredImage> = items
        .into_par_iter()
        .map(|(name, pred, gt)| score_pair(name, &pred, &gt))
        .collect::<Result<_>>()?;
    Ok(finish(dataset, scored, missing))
}

fn open_gray(path: &Path) -> Result<image::GrayImage> {
    image::open(path)
        .map(|img| img.to_luma8())
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Ground-truth mask, foreground where the gray value exceeds 127.
pub fn load_mask(path: &Path) -> Result<Array2<bool>> {
    let img = open_gray(path)?;
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| img.get_pixel(c as u32, r as u32)[0] > 127))
}

/// Grayscale prediction image scaled to `[0, 1]`.
pub fn load_prediction(path: &Path) -> Result<Array2<f64>> {
    let img = open_gray(path)?;
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| img.get_pixel(c as u32, r as u32)[0] as f64 / 255.0))
}

/// Scores `(prediction file, mask file)` pairs. Pairs whose prediction file
/// is absent are listed as missing and the dataset is marked incomplete.
pub fn score_files(dataset: &str, pairs: &[(PathBuf, PathBuf)]) -> Result<DatasetScores> {
    let mut items = Vec::new();
    let mut missing = Vec::new();
    for (pred, gt) in pairs {
        let name = gt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if !pred.exists() || !gt.exists() {
            missing.push(name);
            continue;
        }
        items.push((name, load_prediction(pred)?, load_mask(gt)?));
    }
    score_maps(dataset, items, missing)
}

/// Fixed-width table, one row per dataset, columns in report order.
pub fn format_table(rows: &[DatasetScores]) -> String {
    let mut out = format!("{:<16}", "dataset");
    for c in ScoreVector::COLUMNS {
        out.push_str(&format!("{c:>9}"));
    }
    out.push_str(&format!("{:>9}\n", "SD"));
    for d in rows {
        out.push_str(&format!("{:<16}", d.dataset));
        for v in d.mean.to_array() {
            out.push_str(&format!("{v:>9.3}"));
        }
        out.push_str(&format!("{:>9.3}", d.std_mDic));
        if !d.complete {
            out.push_str(&format!("  (incomplete: {} missing)", d.missing.len()));
        }
        out.push('\n');
    }
    out
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
