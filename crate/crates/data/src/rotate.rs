//! Rotation about the image center for the test-time robustness probe.
//!
//! Output pixels are pulled back through the inverse rotation; samples that
//! land outside the source take the fill value (black for images, background
//! for masks).

use ndarray::{Array2, Array3};

use crate::sample::Sample;

/// Source coordinate `(y, x)` for output pixel `(y, x)` under a rotation by `degrees`.
fn inverse_map(h: usize, w: usize, degrees: f64) -> impl Fn(usize, usize) -> (f64, f64) {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    move |y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        (cy + cos * dy - sin * dx, cx + sin * dy + cos * dx)
    }
}

fn bilinear(plane: &Array2<f32>, y: f64, x: f64, fill: f32) -> f32 {
    let (h, w) = plane.dim();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
    let at = |yy: f64, xx: f64| {
        if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
            plane[(yy as usize, xx as usize)]
        } else {
            fill
        }
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
    let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear rotation of a `(C, H, W)` image; `fill[c]` pads channel `c`.
pub fn rotate_image(image: &Array3<f32>, degrees: f64, fill: &[f32]) -> Array3<f32> {
    if degrees.rem_euclid(360.0) == 0.0 {
        return image.clone();
    }
    let (c, h, w) = image.dim();
    let map = inverse_map(h, w, degrees);
    let planes: Vec<Array2<f32>> = (0..c).map(|i| image.index_axis(ndarray::Axis(0), i).to_owned()).collect();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        let (sy, sx) = map(y, x);
        bilinear(&planes[ch], sy, sx, fill[ch])
    })
}

/// Nearest-neighbour rotation of a boolean mask with background padding.
pub fn rotate_mask(mask: &Array2<bool>, degrees: f64) -> Array2<bool> {
    if degrees.rem_euclid(360.0) == 0.0 {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    let map = inverse_map(h, w, degrees);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (sy, sx) = map(y, x);
        let (ry, rx) = (sy.round(), sx.round());
        ry >= 0.0 && rx >= 0.0 && (ry as usize) < h && (rx as usize) < w && mask[(ry as usize, rx as usize)]
    })
}

/// Rotates image and mask of a test sample by the same angle.
pub fn rotate_eval(sample: &Sample, degrees: f64) -> Sample {
    let fill: Vec<f32> = (0..3).map(|c| sample.normalization.black(c)).collect();
    let mask = rotate_mask(&sample.mask.mapv(|v| v > 0.5), degrees).mapv(|b| if b { 1.0 } else { 0.0 });
    Sample {
        image: rotate_image(&sample.image, degrees, &fill),
        mask,
        meta: sample.meta.clone(),
        normalization: sample.normalization,
    }
}
