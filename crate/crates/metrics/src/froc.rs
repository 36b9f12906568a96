//! FROC-style detection curve: lesion sensitivity vs false-positive regions per image.
//!
//! At each threshold the binarized prediction (`pred > t`) is split into
//! 8-connected regions. A ground-truth region counts as detected when any
//! predicted pixel lands on it; a predicted region touching no ground truth
//! is a false positive.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{check_pair, Error, Result};

pub const STEPS: usize = 20;

/// Thresholds 0.05, 0.10, ..., 0.95.
pub fn thresholds() -> Vec<f64> {
    (1..STEPS).map(|k| k as f64 / STEPS as f64).collect()
}

/// Labels 8-connected `true` regions from 1; background stays 0.
pub fn label_regions(mask: ArrayView2<bool>) -> (Array2<usize>, usize) {
    let (h, w) = mask.dim();
    let mut labels = Array2::zeros((h, w));
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        let (r0, c0) = (start / w, start % w);
        if !mask[(r0, c0)] || labels[(r0, c0)] != 0 {
            continue;
        }
        next += 1;
        labels[(r0, c0)] = next;
        stack.push((r0, c0));
        while let Some((r, c)) = stack.pop() {
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    if mask[(rr, cc)] && labels[(rr, cc)] == 0 {
                        labels[(rr, cc)] = next;
                        stack.push((rr, cc));
                    }
                }
            }
        }
    }
    (labels, next)
}

/// Per-threshold detection counts of one image; additive across images.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Detections {
    pub detected: usize,
    pub lesions: usize,
    pub false_positives: usize,
}

pub fn image_detections(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<Vec<Detections>> {
    check_pair(pred, gt)?;
    let (gt_labels, lesions) = label_regions(gt);
    thresholds()
        .into_iter()
        .map(|t| {
            let on = pred.mapv(|p| p > t);
            let (pred_labels, regions) = label_regions(on.view());
            let mut hit = vec![false; lesions + 1];
            let mut touches = vec![false; regions + 1];
            for (&pl, &gl) in pred_labels.iter().zip(gt_labels.iter()) {
                if pl != 0 && gl != 0 {
                    hit[gl] = true;
                    touches[pl] = true;
                }
            }
            Ok(Detections {
                detected: hit.iter().filter(|&&h| h).count(),
                lesions,
                false_positives: touches[1..].iter().filter(|&&t| !t).count(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fp_per_image: f64,
}

/// Sums per-image detections into one curve. With no lesions at all the
/// sensitivity is reported as 1.
pub fn froc_curve(per_image: &[Vec<Detections>]) -> Vec<FrocPoint> {
    let images = per_image.len().max(1) as f64;
    thresholds()
        .into_iter()
        .enumerate()
        .map(|(i, threshold)| {
            let total = per_image.iter().fold(Detections::default(), |acc, d| Detections {
                detected: acc.detected + d[i].detected,
                lesions: acc.lesions + d[i].lesions,
                false_positives: acc.false_positives + d[i].false_positives,
            });
            FrocPoint {
                threshold,
                tpr: if total.lesions == 0 { 1.0 } else { total.detected as f64 / total.lesions as f64 },
                fp_per_image: total.false_positives as f64 / images,
            }
        })
        .collect()
}

pub fn write_froc_csv(path: &Path, curve: &[FrocPoint]) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let mut out = std::fs::File::create(path).map_err(io)?;
    let mut text = String::from("threshold,tpr,fp_per_image\n");
    for p in curve {
        text.push_str(&format!("{:.2},{:.6},{:.6}\n", p.threshold, p.tpr, p.fp_per_image));
    }
    out.write_all(text.as_bytes()).map_err(io)
}

/// Reads a curve written by [`write_froc_csv`].
pub fn read_froc_csv(path: &Path) -> Result<Vec<FrocPoint>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let bad = |line: &str| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad FROC row '{line}'")),
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let v: Vec<f64> = line.split(',').map(|f| f.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad(line))?;
            match v[..] {
                [threshold, tpr, fp_per_image] => Ok(FrocPoint { threshold, tpr, fp_per_image }),
                _ => Err(bad(line)),
            }
        })
        .collect()
}
