//! Structure measure: object-aware plus region-aware similarity, α = 0.5.

use ndarray::{s, ArrayView2};

use crate::{check_pair, Result};

const EPS: f64 = f64::EPSILON;
pub const ALPHA: f64 = 0.5;

/// Mean and sample standard deviation (N-1); a single value has deviation 0.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn object_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn s_object(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> f64 {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        if g {
            fg.push(p);
        } else {
            bg.push(1.0 - p);
        }
    }
    let u = fg.len() as f64 / pred.len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// MATLAB `round`: halves away from zero.
fn round_half_away(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// 1-based rounded centroid `(x, y)`; image center when the mask is empty.
fn centroid(gt: ArrayView2<bool>) -> (usize, usize) {
    let (rows, cols) = gt.dim();
    let total = gt.iter().filter(|&&g| g).count();
    if total == 0 {
        return (round_half_away(cols as f64 / 2.0), round_half_away(rows as f64 / 2.0));
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for ((r, c), &g) in gt.indexed_iter() {
        if g {
            sx += (c + 1) as f64;
            sy += (r + 1) as f64;
        }
    }
    (round_half_away(sx / total as f64), round_half_away(sy / total as f64))
}

fn ssim(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> f64 {
    let n = pred.len() as f64;
    let x = pred.sum() / n;
    let y = gt.iter().filter(|&&g| g).count() as f64 / n;
    let (mut sx2, mut sy2, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let (dp, dg) = (p - x, if g { 1.0 } else { 0.0 } - y);
        sx2 += dp * dp;
        sy2 += dg * dg;
        sxy += dp * dg;
    }
    let d = n - 1.0 + EPS;
    let (sx2, sy2, sxy) = (sx2 / d, sy2 / d, sxy / d);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    if alpha != 0.0 {
        alpha / beta
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> f64 {
    let (h, w) = gt.dim();
    let (x, y) = centroid(gt);
    let area = (h * w) as f64;
    let quadrants = [
        (s![..y, ..x], (x * y) as f64),
        (s![..y, x..], ((w - x) * y) as f64),
        (s![y.., ..x], (x * (h - y)) as f64),
        (s![y.., x..], ((w - x) * (h - y)) as f64),
    ];
    quadrants
        .into_iter()
        .filter(|(_, cells)| *cells > 0.0)
        .map(|(sl, cells)| cells / area * ssim(pred.slice(sl), gt.slice(sl)))
        .sum()
}

pub fn smeasure(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<f64> {
    check_pair(pred, gt)?;
    let n = pred.len() as f64;
    let y = gt.iter().filter(|&&g| g).count() as f64 / n;
    let x = pred.sum() / n;
    let q = if y == 0.0 {
        1.0 - x
    } else if y == 1.0 {
        x
    } else {
        ALPHA * s_object(pred, gt) + (1.0 - ALPHA) * s_region(pred, gt)
    };
    Ok(q.max(0.0))
}
