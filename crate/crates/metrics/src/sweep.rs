//! Threshold sweeps: Dice, IoU and enhanced-alignment (E) measure.
//!
//! Level `k` (of 256) binarizes the prediction as `pred > k / 256`. Each
//! pixel therefore switches on for the first `ceil(256 * pred)` levels, so a
//! histogram of those counts gives every level's confusion matrix at once.

use ndarray::ArrayView2;

use crate::{check_pair, Result};

pub const LEVELS: usize = 256;

/// Threshold of level `k`.
pub fn threshold(k: usize) -> f64 {
    k as f64 / LEVELS as f64
}

/// Number of levels at which `p` is foreground.
fn on_levels(p: f64) -> usize {
    ((p * LEVELS as f64).ceil() as usize).min(LEVELS)
}

/// Per-level confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fg: usize,
    pub n: usize,
}

impl Counts {
    pub fn predicted(&self) -> usize {
        self.tp + self.fp
    }
}

/// Confusion counts for all 256 levels.
pub fn level_counts(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<Vec<Counts>> {
    check_pair(pred, gt)?;
    let mut hist_fg = vec![0usize; LEVELS + 1];
    let mut hist_bg = vec![0usize; LEVELS + 1];
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let c = on_levels(p);
        if g {
            hist_fg[c] += 1;
        } else {
            hist_bg[c] += 1;
        }
    }
    let fg: usize = hist_fg.iter().sum();
    let n = pred.len();
    // pixels with count > k are on at level k
    let mut out = vec![Counts::default(); LEVELS];
    let (mut tp, mut fp) = (0, 0);
    for k in (0..LEVELS).rev() {
        tp += hist_fg[k + 1];
        fp += hist_bg[k + 1];
        out[k] = Counts { tp, fp, fg, n };
    }
    Ok(out)
}

fn dice(c: &Counts) -> f64 {
    let denom = c.predicted() + c.fg;
    if denom == 0 {
        1.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    }
}

fn iou(c: &Counts) -> f64 {
    let union = c.predicted() + c.fg - c.tp;
    if union == 0 {
        1.0
    } else {
        c.tp as f64 / union as f64
    }
}

/// Mean Dice and mean IoU over the 256 levels.
pub fn dice_iou_sweep(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<(f64, f64)> {
    let levels = level_counts(pred, gt)?;
    let m = LEVELS as f64;
    Ok((
        levels.iter().map(dice).sum::<f64>() / m,
        levels.iter().map(iou).sum::<f64>() / m,
    ))
}

/// Enhanced-alignment score of one binary map given its confusion counts.
///
/// Every pixel falls into one of four (pred, gt) classes and the enhanced
/// alignment is constant within a class, so the pixel mean is a weighted sum.
pub fn enhanced_alignment(c: &Counts) -> f64 {
    let n = c.n as f64;
    let predicted = c.predicted();
    if c.fg == 0 {
        // all-background truth: score is the fraction of background predictions
        return (c.n - predicted) as f64 / n;
    }
    if c.fg == c.n {
        return predicted as f64 / n;
    }
    let mu_p = predicted as f64 / n;
    let mu_g = c.fg as f64 / n;
    let value = |p: f64, g: f64| {
        let (a, b) = (p - mu_p, g - mu_g);
        let align = 2.0 * a * b / (a * a + b * b);
        (align + 1.0).powi(2) / 4.0
    };
    let tp = c.tp as f64;
    let fp = c.fp as f64;
    let fn_ = (c.fg - c.tp) as f64;
    let tn = n - tp - fp - fn_;
    (tp * value(1.0, 1.0) + fp * value(1.0, 0.0) + fn_ * value(0.0, 1.0) + tn * value(0.0, 0.0)) / n
}

/// Mean and maximum E-measure over the 256 levels.
pub fn emeasure(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<(f64, f64)> {
    let scores: Vec<f64> = level_counts(pred, gt)?.iter().map(enhanced_alignment).collect();
    let mean = scores.iter().sum::<f64>() / LEVELS as f64;
    let max = scores.iter().cloned().fold(0.0, f64::max);
    Ok((mean, max))
}
