//! Segmentation metrics over probability maps and binary masks.
//!
//! Every scorer takes a prediction in `[0, 1]` and a boolean mask of the same
//! size. Threshold-based scores sweep 256 levels.

pub mod dataset;
pub mod froc;
pub mod structure;
pub mod sweep;
pub mod weighted;

use std::path::PathBuf;

use ndarray::ArrayView2;
use thiserror::Error;

pub use dataset::{
    aggregate, finish, format_table, load_mask, load_prediction, normalize_prediction, resize_bilinear, score_files,
    score_image, score_maps, score_pair, write_json, DatasetScores, ImageScore, ScoreVector, ScoredImage,
};
pub use froc::{froc_curve, read_froc_csv, write_froc_csv, Detections, FrocPoint};
pub use structure::smeasure;
pub use sweep::{dice_iou_sweep, emeasure};
pub use weighted::weighted_fmeasure;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: prediction {pred:?} vs mask {gt:?}")]
    Shape { pred: (usize, usize), gt: (usize, usize) },

    #[error("empty map")]
    Empty,

    #[error("prediction value {0} outside [0, 1]")]
    OutOfRange(f64),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Validates a prediction/mask pair: equal non-empty shapes, finite values in `[0, 1]`.
pub fn check_pair(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape { pred: pred.dim(), gt: gt.dim() });
    }
    if pred.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(&bad) = pred.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(bad));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<f64> {
    check_pair(pred, gt)?;
    let sum: f64 = pred
        .iter()
        .zip(gt.iter())
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn check_pair_rejects_bad_input() {
        let gt = array![[true, false]];
        assert!(matches!(check_pair(array![[0.5]].view(), gt.view()), Err(Error::Shape { .. })));
        assert!(matches!(check_pair(array![[1.5, 0.0]].view(), gt.view()), Err(Error::OutOfRange(v)) if v == 1.5));
        assert!(matches!(check_pair(array![[f64::NAN, 0.0]].view(), gt.view()), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn mae_trivial_cases() {
        let gt = array![[true, false], [false, true]];
        let pred = gt.mapv(|g| if g { 1.0 } else { 0.0 });
        assert_eq!(mae(pred.view(), gt.view()).unwrap(), 0.0);
        assert_eq!(mae(pred.mapv(|p| 1.0 - p).view(), gt.view()).unwrap(), 1.0);
        let p = array![[0.2, 0.4, 0.1], [0.9, 0.0, 0.3], [0.5, 0.5, 1.0]];
        let g = array![[true, false, false], [true, false, false], [false, true, true]];
        let want = (0.8 + 0.4 + 0.1 + 0.1 + 0.0 + 0.3 + 0.5 + 0.5 + 0.0) / 9.0;
        assert!((mae(p.view(), g.view()).unwrap() - want).abs() < 1e-15);
    }
}
