//! Structure-loss terms written directly from their definitions over flat slices.

/// Box mean over in-bounds cells only, straight from the definition.
pub fn oracle_weights(g: &[f64], h: usize, w: usize, window: usize, gain: f64) -> Vec<f64> {
    let r = (window / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut sum, mut n) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                        sum += g[yy as usize * w + xx as usize];
                        n += 1.0;
                    }
                }
            }
            let i = y as usize * w + x as usize;
            out[i] = 1.0 + gain * (sum / n - g[i]).abs();
        }
    }
    out
}

pub fn oracle_bce(p: &[f64], g: &[f64], w: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..p.len() {
        let s = 1.0 / (1.0 + (-p[i]).exp());
        let bce = -(g[i] * s.ln() + (1.0 - g[i]) * (1.0 - s).ln());
        num += w[i] * bce;
        den += w[i];
    }
    num / den
}

pub fn oracle_iou(p: &[f64], g: &[f64], w: &[f64], eps: f64) -> f64 {
    let (mut inter, mut union) = (0.0, 0.0);
    for i in 0..p.len() {
        let s = 1.0 / (1.0 + (-p[i]).exp());
        inter += w[i] * s * g[i];
        union += w[i] * (s + g[i] - s * g[i]);
    }
    1.0 - (inter + eps) / (union + eps)
}
