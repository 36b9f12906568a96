//! Brute-force and literal metric transcriptions plus a seeded random case
//! generator, shared by the metric tests and the acceptance run.

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIZE: usize = 16;

pub fn as_f(g: bool) -> f64 {
    if g {
        1.0
    } else {
        0.0
    }
}

/// Random prediction plus a mask that is a noisy rectangle, occasionally empty or full.
pub fn random_case(rng: &mut ChaCha8Rng, case: usize) -> (Array2<f64>, Array2<bool>) {
    let gt = match case % 10 {
        0 => Array2::from_elem((SIZE, SIZE), false),
        1 => Array2::from_elem((SIZE, SIZE), true),
        _ => {
            let (r0, c0) = (rng.gen_range(0..10), rng.gen_range(0..10));
            let (r1, c1) = (rng.gen_range(r0 + 1..=SIZE), rng.gen_range(c0 + 1..=SIZE));
            let flip = rng.gen_range(0.0..0.1);
            Array2::from_shape_fn((SIZE, SIZE), |(r, c)| {
                let inside = (r0..r1).contains(&r) && (c0..c1).contains(&c);
                inside ^ rng.gen_bool(flip)
            })
        }
    };
    let pred = match case % 4 {
        // exact level values exercise the strict comparison
        0 => Array2::from_shape_fn((SIZE, SIZE), |_| rng.gen_range(0..=256) as f64 / 256.0),
        1 => gt.mapv(|g| (0.7 * as_f(g) + rng.gen_range(0.0..0.3)).min(1.0)),
        _ => Array2::from_shape_fn((SIZE, SIZE), |_| rng.gen_range(0.0..=1.0)),
    };
    (pred, gt)
}

pub fn cases() -> Vec<(Array2<f64>, Array2<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..100).map(|i| random_case(&mut rng, i)).collect()
}

// ---- brute-force sweep -------------------------------------------------------

pub fn oracle_dice_iou(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> (f64, f64) {
    let (mut dice, mut iou) = (0.0, 0.0);
    for k in 0..256 {
        let t = k as f64 / 256.0;
        let (mut inter, mut p, mut g) = (0.0, 0.0, 0.0);
        for (&x, &y) in pred.iter().zip(gt.iter()) {
            let b = x > t;
            inter += as_f(b && y);
            p += as_f(b);
            g += as_f(y);
        }
        dice += if p + g == 0.0 { 1.0 } else { 2.0 * inter / (p + g) };
        iou += if p + g - inter == 0.0 { 1.0 } else { inter / (p + g - inter) };
    }
    (dice / 256.0, iou / 256.0)
}

pub fn oracle_mae(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> f64 {
    let mut acc = 0.0;
    for (&x, &y) in pred.iter().zip(gt.iter()) {
        acc += (x - as_f(y)).abs();
    }
    acc / pred.len() as f64
}

// ---- E-measure, per-pixel alignment matrix -------------------------------------

pub fn oracle_emeasure(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> (f64, f64) {
    let n = pred.len() as f64;
    let gtf = gt.mapv(as_f);
    let mut scores = Vec::new();
    for k in 0..256 {
        let fm = pred.mapv(|x| as_f(x > k as f64 / 256.0));
        let enhanced = if gtf.sum() == 0.0 {
            fm.mapv(|v| 1.0 - v)
        } else if gtf.sum() == n {
            fm.clone()
        } else {
            let dfm = &fm - fm.mean().unwrap();
            let dgt = &gtf - gtf.mean().unwrap();
            let align = Array2::from_shape_fn(fm.dim(), |ix| {
                2.0 * dgt[ix] * dfm[ix] / (dgt[ix] * dgt[ix] + dfm[ix] * dfm[ix] + f64::EPSILON)
            });
            align.mapv(|a| (a + 1.0).powi(2) / 4.0)
        };
        scores.push(enhanced.sum() / n);
    }
    let mean = scores.iter().sum::<f64>() / 256.0;
    (mean, scores.iter().cloned().fold(f64::MIN, f64::max))
}

// ---- S-measure, straight transcription --------------------------------------

pub fn sample_std(v: &Array2<f64>, mask: &Array2<bool>, want: bool) -> (f64, f64, usize) {
    let vals: Vec<f64> = v.iter().zip(mask.iter()).filter(|(_, &m)| m == want).map(|(&x, _)| x).collect();
    let n = vals.len();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd, n)
}

pub fn oracle_object(pred: &Array2<f64>, gt: &Array2<bool>) -> f64 {
    let eps = f64::EPSILON;
    let (xf, sf, nf) = sample_std(pred, gt, true);
    let o_fg = if nf == 0 { 0.0 } else { 2.0 * xf / (xf * xf + 1.0 + sf + eps) };
    let inv = pred.mapv(|p| 1.0 - p);
    let (xb, sb, nb) = sample_std(&inv, gt, false);
    let o_bg = if nb == 0 { 0.0 } else { 2.0 * xb / (xb * xb + 1.0 + sb + eps) };
    let u = gt.iter().filter(|&&g| g).count() as f64 / gt.len() as f64;
    u * o_fg + (1.0 - u) * o_bg
}

pub fn oracle_ssim(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> f64 {
    let eps = f64::EPSILON;
    let n = pred.len() as f64;
    let g = gt.mapv(as_f);
    let x = pred.mean().unwrap();
    let y = g.mean().unwrap();
    let sx = pred.mapv(|p| (p - x).powi(2)).sum() / (n - 1.0 + eps);
    let sy = g.mapv(|v| (v - y).powi(2)).sum() / (n - 1.0 + eps);
    let sxy = ((&pred - x) * (&g - y)).sum() / (n - 1.0 + eps);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + eps)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn centroid(gt: &Array2<bool>) -> (usize, usize) {
    let (h, w) = gt.dim();
    let total: f64 = gt.iter().filter(|&&g| g).count() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if gt[(r, c)] {
                sx += (c + 1) as f64;
                sy += (r + 1) as f64;
            }
        }
    }
    ((sx / total).round() as usize, (sy / total).round() as usize)
}

pub fn oracle_region(pred: &Array2<f64>, gt: &Array2<bool>, split_col: Option<usize>) -> f64 {
    let (h, w) = gt.dim();
    let (cx, y) = centroid(gt);
    let x = split_col.unwrap_or(cx);
    let area = (h * w) as f64;
    let mut q = 0.0;
    for (rs, cs) in [(0..y, 0..x), (0..y, x..w), (y..h, 0..x), (y..h, x..w)] {
        if rs.is_empty() || cs.is_empty() {
            continue;
        }
        let wgt = (rs.len() * cs.len()) as f64 / area;
        let p = pred.slice(s![rs.clone(), cs.clone()]);
        let g = gt.slice(s![rs, cs]);
        q += wgt * oracle_ssim(p, g);
    }
    q
}

pub fn oracle_smeasure(pred: &Array2<f64>, gt: &Array2<bool>) -> f64 {
    oracle_smeasure_split(pred, gt, None)
}

pub fn oracle_smeasure_split(pred: &Array2<f64>, gt: &Array2<bool>, split_col: Option<usize>) -> f64 {
    let y = gt.iter().filter(|&&g| g).count() as f64 / gt.len() as f64;
    let q = if y == 0.0 {
        1.0 - pred.mean().unwrap()
    } else if y == 1.0 {
        pred.mean().unwrap()
    } else {
        0.5 * oracle_object(pred, gt) + 0.5 * oracle_region(pred, gt, split_col)
    };
    q.max(0.0)
}

// ---- weighted F, literal transcription with a dense 2-D kernel --------------

pub fn oracle_wfm(pred: &Array2<f64>, gt: &Array2<bool>) -> f64 {
    let eps = f64::EPSILON;
    let (h, w) = gt.dim();
    if !gt.iter().any(|&g| g) {
        return if pred.iter().any(|&p| p >= 0.5) { 0.0 } else { 1.0 };
    }
    let g = gt.mapv(as_f);
    let e = (pred - &g).mapv(f64::abs);
    // brute-force nearest foreground pixels; ties share their mean error
    let mut dst = Array2::zeros((h, w));
    let mut et = e.clone();
    for r in 0..h {
        for c in 0..w {
            if gt[(r, c)] {
                continue;
            }
            let mut best = usize::MAX;
            let mut errs = Vec::new();
            for rr in 0..h {
                for cc in 0..w {
                    if gt[(rr, cc)] {
                        let d2 = r.abs_diff(rr).pow(2) + c.abs_diff(cc).pow(2);
                        if d2 < best {
                            best = d2;
                            errs.clear();
                        }
                        if d2 == best {
                            errs.push(e[(rr, cc)]);
                        }
                    }
                }
            }
            dst[(r, c)] = (best as f64).sqrt();
            et[(r, c)] = errs.iter().sum::<f64>() / errs.len() as f64;
        }
    }
    // fspecial('gaussian', 7, 5)
    let mut k = Array2::from_shape_fn((7, 7), |(i, j)| {
        let (x, y) = (i as f64 - 3.0, j as f64 - 3.0);
        (-(x * x + y * y) / 50.0).exp()
    });
    k /= k.sum();
    let ea = Array2::from_shape_fn((h, w), |(r, c)| {
        let mut acc = 0.0;
        for i in 0..7 {
            for j in 0..7 {
                let (rr, cc) = (r as isize + i as isize - 3, c as isize + j as isize - 3);
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    acc += k[(i, j)] * et[(rr as usize, cc as usize)];
                }
            }
        }
        acc
    });
    let min_e = Array2::from_shape_fn((h, w), |ix| if gt[ix] && ea[ix] < e[ix] { ea[ix] } else { e[ix] });
    let b = Array2::from_shape_fn((h, w), |ix| if gt[ix] { 1.0 } else { 2.0 - ((0.5f64).ln() / 5.0 * dst[ix]).exp() });
    let ew = &min_e * &b;
    let tpw = g.sum() - (&ew * &g).sum();
    let fpw = (&ew * g.mapv(|v| 1.0 - v)).sum();
    let r = 1.0 - (&ew * &g).sum() / g.sum();
    let p = tpw / (eps + tpw + fpw);
    2.0 * r * p / (eps + r + p)
}
