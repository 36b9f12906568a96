//! Differentiable tensor primitives shared by the encoder, decoder and losses.
//!
//! All spatial tensors are laid out `(batch, channels, height, width)`.
//! Resampling is expressed as a pair of dense matrices applied along the two
//! spatial axes, which keeps every operation inside the autodiff graph.

use candle_core::{DType, Device, Tensor, D};

use crate::error::{Error, Result};

/// Logistic function written through `tanh` so that saturated logits never
/// produce `0 * inf` in the backward pass.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Numerically stable softmax along `dim`.
pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(dim)?;
    Ok(e.broadcast_div(&s)?)
}

/// Layer normalization over the last dimension.
pub fn layer_norm(x: &Tensor, weight: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed.broadcast_mul(weight)?.broadcast_add(bias)?)
}

/// Row-stochastic matrix (`out x in`, row major) for bilinear resampling with
/// half-pixel centers and no corner alignment.
pub fn bilinear_weights(input: usize, output: usize) -> Vec<f64> {
    let mut m = vec![0.0; input * output];
    let scale = input as f64 / output as f64;
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        let frac = src - i0 as f64;
        m[o * input + i0] += 1.0 - frac;
        m[o * input + i1] += frac;
    }
    m
}

/// Adaptive average pooling matrix (`out x in`): output cell `o` averages
/// input cells `floor(o*in/out) .. ceil((o+1)*in/out)`.
pub fn adaptive_pool_weights(input: usize, output: usize) -> Vec<f64> {
    let mut m = vec![0.0; input * output];
    for o in 0..output {
        let start = (o * input) / output;
        let end = ((o + 1) * input).div_ceil(output);
        let n = (end - start) as f64;
        for i in start..end {
            m[o * input + i] = 1.0 / n;
        }
    }
    m
}

fn matrix(data: Vec<f64>, rows: usize, cols: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, (rows, cols), device)?.to_dtype(dtype)?)
}

/// Applies `rows` (`out_h x h`) and `cols` (`out_w x w`) along the spatial
/// axes of a `(B, C, H, W)` tensor.
pub fn separable_apply(x: &Tensor, rows: &Tensor, cols: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (out_h, rh) = rows.dims2()?;
    let (out_w, rw) = cols.dims2()?;
    if rh != h || rw != w {
        return Err(Error::shape(
            "separable_apply",
            format!("matrices {rh}x{rw} do not match spatial dims {h}x{w}"),
        ));
    }
    let along_w = x
        .contiguous()?
        .reshape((b * c * h, w))?
        .matmul(&cols.t()?)?
        .reshape((b, c, h, out_w))?;
    let along_h = along_w
        .transpose(2, 3)?
        .contiguous()?
        .reshape((b * c * out_w, h))?
        .matmul(&rows.t()?)?
        .reshape((b, c, out_w, out_h))?
        .transpose(2, 3)?
        .contiguous()?;
    Ok(along_h)
}

/// Bilinear resize of a `(B, C, H, W)` tensor, corner alignment disabled.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let rows = matrix(bilinear_weights(h, out_h), out_h, h, x.dtype(), x.device())?;
    let cols = matrix(bilinear_weights(w, out_w), out_w, w, x.dtype(), x.device())?;
    separable_apply(x, &rows, &cols)
}

/// Adaptive average pooling of a `(B, C, H, W)` tensor to `out_h x out_w`.
pub fn adaptive_avg_pool(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let rows = matrix(adaptive_pool_weights(h, out_h), out_h, h, x.dtype(), x.device())?;
    let cols = matrix(adaptive_pool_weights(w, out_w), out_w, w, x.dtype(), x.device())?;
    separable_apply(x, &rows, &cols)
}

/// Band matrix summing a window of `2*radius+1` cells, clipped at the borders.
fn box_weights(n: usize, radius: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for o in 0..n {
        let lo = o.saturating_sub(radius);
        let hi = (o + radius).min(n - 1);
        for i in lo..=hi {
            m[o * n + i] = 1.0;
        }
    }
    m
}

/// Stride-1 average pooling with a square odd window where padded cells are
/// excluded from the average (each output divides by its in-bounds count).
pub fn box_mean(x: &Tensor, window: usize) -> Result<Tensor> {
    if window.is_multiple_of(2) {
        return Err(Error::Config(format!("box window must be odd, got {window}")));
    }
    let (_, _, h, w) = x.dims4()?;
    let radius = window / 2;
    let (dtype, dev) = (x.dtype(), x.device());
    let rows = matrix(box_weights(h, radius), h, h, dtype, dev)?;
    let cols = matrix(box_weights(w, radius), w, w, dtype, dev)?;
    let sums = separable_apply(x, &rows, &cols)?;
    let ones = Tensor::ones((1, 1, h, w), dtype, dev)?;
    let counts = separable_apply(&ones, &rows, &cols)?;
    Ok(sums.broadcast_div(&counts)?)
}

/// Depthwise 3x3 convolution with zero padding 1, `weight` shaped `(C, 1, 3, 3)`.
/// Expressed as nine shifted multiply-adds.
pub fn depthwise_conv3x3(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    let padded = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let mut acc: Option<Tensor> = None;
    for dy in 0..3 {
        for dx in 0..3 {
            let tap = weight.narrow(2, dy, 1)?.narrow(3, dx, 1)?.reshape((1, c, 1, 1))?;
            let shifted = padded.narrow(2, dy, h)?.narrow(3, dx, w)?;
            let term = shifted.broadcast_mul(&tap)?;
            acc = Some(match acc {
                None => term,
                Some(a) => (a + term)?,
            });
        }
    }
    let mut out = acc.expect("nine taps");
    if let Some(b) = bias {
        out = out.broadcast_add(&b.reshape((1, c, 1, 1))?)?;
    }
    Ok(out)
}

/// Flattens a `(B, C, H, W)` map into `(B, H*W, C)` tokens.
pub fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()?)
}

/// Inverse of [`to_tokens`].
pub fn from_tokens(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, n, c) = x.dims3()?;
    if n != h * w {
        return Err(Error::shape("from_tokens", format!("{n} tokens for a {h}x{w} grid")));
    }
    Ok(x.transpose(1, 2)?.contiguous()?.reshape((b, c, h, w))?)
}

/// Flattens any tensor to a `Vec<f64>`.
pub fn to_f64_vec(x: &Tensor) -> Result<Vec<f64>> {
    Ok(x.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}
