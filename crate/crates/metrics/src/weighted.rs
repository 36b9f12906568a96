//! Weighted F-measure (β² = 1) with distance-dependent error weighting.
//!
//! Background errors are replaced by the error at their nearest foreground
//! pixel, foreground errors are smoothed with a 7x7 Gaussian (σ = 5) and may
//! only decrease, and background errors are amplified with distance from the
//! object by `2 - exp(ln(0.5) / 5 * d)`.

use ndarray::{Array2, ArrayView2};

use crate::{check_pair, Result};

const EPS: f64 = f64::EPSILON;
const BETA2: f64 = 1.0;

/// Exact Euclidean distance transform to the nearest `true` pixel.
///
/// Returns the distance and, per pixel, the flat row-major indices of every
/// equidistant nearest `true` pixel (ascending). `true` pixels map to
/// themselves. Requires at least one `true`.
pub fn distance_transform(mask: ArrayView2<bool>) -> (Array2<f64>, Array2<Vec<usize>>) {
    let (h, w) = mask.dim();
    // per column, nearest foreground rows above/below: (squared distance, rows)
    let mut column: Vec<Option<(usize, [Option<usize>; 2])>> = vec![None; h * w];
    for c in 0..w {
        let mut last: Option<usize> = None;
        for r in 0..h {
            if mask[(r, c)] {
                last = Some(r);
            }
            column[r * w + c] = last.map(|lr| ((r - lr) * (r - lr), [Some(lr), None]));
        }
        let mut next: Option<usize> = None;
        for r in (0..h).rev() {
            if mask[(r, c)] {
                next = Some(r);
            }
            if let Some(nr) = next {
                let d = (nr - r) * (nr - r);
                match column[r * w + c] {
                    Some((du, rows)) if du == d && d > 0 => column[r * w + c] = Some((d, [rows[0], Some(nr)])),
                    Some((du, _)) if du <= d => {}
                    _ => column[r * w + c] = Some((d, [Some(nr), None])),
                }
            }
        }
    }
    let mut dist = Array2::zeros((h, w));
    let mut nearest = Array2::from_elem((h, w), Vec::new());
    for r in 0..h {
        for c in 0..w {
            let mut best = usize::MAX;
            let mut set = Vec::new();
            for cc in 0..w {
                if let Some((dv, rows)) = column[r * w + cc] {
                    let dx = c.abs_diff(cc);
                    let d2 = dv + dx * dx;
                    if d2 < best {
                        best = d2;
                        set.clear();
                    }
                    if d2 == best {
                        set.extend(rows.iter().flatten().map(|&row| row * w + cc));
                    }
                }
            }
            assert!(best != usize::MAX, "mask has a foreground pixel");
            set.sort_unstable();
            dist[(r, c)] = (best as f64).sqrt();
            nearest[(r, c)] = set;
        }
    }
    (dist, nearest)
}

/// Normalized 1-D factor of the 7x7 Gaussian with σ = 5.
fn gaussian_1d() -> [f64; 7] {
    let mut g = [0.0; 7];
    for (i, v) in g.iter_mut().enumerate() {
        let x = i as f64 - 3.0;
        *v = (-(x * x) / (2.0 * 25.0)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Same-size correlation with the separable Gaussian, zero padding.
fn gaussian_filter(x: &Array2<f64>) -> Array2<f64> {
    let g = gaussian_1d();
    let (h, w) = x.dim();
    let mut tmp = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, gk) in g.iter().enumerate() {
                let cc = c as isize + k as isize - 3;
                if cc >= 0 && (cc as usize) < w {
                    acc += gk * x[(r, cc as usize)];
                }
            }
            tmp[(r, c)] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, gk) in g.iter().enumerate() {
                let rr = r as isize + k as isize - 3;
                if rr >= 0 && (rr as usize) < h {
                    acc += gk * tmp[(rr as usize, c)];
                }
            }
            out[(r, c)] = acc;
        }
    }
    out
}

pub fn weighted_fmeasure(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<f64> {
    check_pair(pred, gt)?;
    let fg = gt.iter().filter(|&&g| g).count();
    if fg == 0 {
        return Ok(if pred.iter().any(|&p| p >= 0.5) { 0.0 } else { 1.0 });
    }
    let (h, w) = gt.dim();
    let err = Array2::from_shape_fn((h, w), |ix| (pred[ix] - if gt[ix] { 1.0 } else { 0.0 }).abs());
    let (dist, nearest) = distance_transform(gt);
    // background pixels inherit the error of their nearest object pixel; ties
    // share the mean so the result does not depend on scan order
    let spread = Array2::from_shape_fn((h, w), |ix| {
        if gt[ix] {
            err[ix]
        } else {
            let set = &nearest[ix];
            set.iter().map(|&i| err[(i / w, i % w)]).sum::<f64>() / set.len() as f64
        }
    });
    let smoothed = gaussian_filter(&spread);
    let (mut tp_err, mut fp_w, mut fg_err_sum) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let ix = (r, c);
            if gt[ix] {
                let e = if smoothed[ix] < err[ix] { smoothed[ix] } else { err[ix] };
                tp_err += e;
                fg_err_sum += e;
            } else {
                let b = 2.0 - (0.5f64.ln() / 5.0 * dist[ix]).exp();
                fp_w += err[ix] * b;
            }
        }
    }
    let tp_w = fg as f64 - tp_err;
    let recall = 1.0 - fg_err_sum / fg as f64;
    let precision = tp_w / (EPS + tp_w + fp_w);
    Ok((1.0 + BETA2) * recall * precision / (EPS + recall + BETA2 * precision))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gaussian_is_normalized_and_symmetric() {
        let g = gaussian_1d();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(g[0], g[6]);
        assert!(g[3] > g[2]);
    }

    #[test]
    fn distance_transform_keeps_all_ties() {
        let m = array![[false, true, false], [true, false, true], [false, true, false]];
        let (d, i) = distance_transform(m.view());
        assert_eq!(d[(1, 1)], 1.0);
        assert_eq!(i[(1, 1)], vec![1, 3, 5, 7]);
        assert_eq!(i[(0, 1)], vec![1]);
        assert_eq!(i[(0, 0)], vec![1, 3]);
        // vertical tie inside one column
        let v = array![[true], [false], [true]];
        assert_eq!(distance_transform(v.view()).1[(1, 0)], vec![0, 2]);
    }

    #[test]
    fn tied_background_takes_mean_error() {
        // both object pixels sit at distance 1 from the middle
        let gt = array![[true, false, true]];
        let a = weighted_fmeasure(array![[1.0, 0.0, 0.4]].view(), gt.view()).unwrap();
        let b = weighted_fmeasure(array![[0.4, 0.0, 1.0]].view(), gt.view()).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gt = array![[false, true, true], [false, true, false], [false, false, false]];
        let pred = gt.mapv(|g| if g { 1.0 } else { 0.0 });
        assert!((weighted_fmeasure(pred.view(), gt.view()).unwrap() - 1.0).abs() < 1e-12);
        // zero padding lets the smoothed error dip below 1 near the border,
        // so the all-zero case is exactly 0 only for objects >= 3 px inside
        let inner = Array2::from_shape_fn((11, 11), |(r, c)| (4..7).contains(&r) && (3..8).contains(&c));
        let zero = Array2::zeros((11, 11));
        assert!(weighted_fmeasure(zero.view(), inner.view()).unwrap() < 1e-12);
        assert!(weighted_fmeasure(Array2::zeros((3, 3)).view(), gt.view()).unwrap() > 0.0);
    }

    #[test]
    fn empty_truth_convention() {
        let gt = Array2::from_elem((3, 3), false);
        assert_eq!(weighted_fmeasure(Array2::from_elem((3, 3), 0.49).view(), gt.view()).unwrap(), 1.0);
        let mut p = Array2::zeros((3, 3));
        p[(1, 1)] = 0.5;
        assert_eq!(weighted_fmeasure(p.view(), gt.view()).unwrap(), 0.0);
    }
}
