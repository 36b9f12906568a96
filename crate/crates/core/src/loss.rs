//! Weighted BCE + weighted IoU structure loss with dual supervision.
//!
//! Pixels are weighted by `1 + gain * |boxmean(G) - G|`, which raises the
//! weight of pixels near mask boundaries. The main term supervises P2, the
//! auxiliary term P1; the summed prediction is not supervised.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PredictionTriple;
use crate::ops::{box_mean, sigmoid, to_f64_vec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub weight_window: usize,
    pub weight_gain: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weight_window: 31,
            weight_gain: 5.0,
            eps: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weight_window.is_multiple_of(2) {
            return Err(Error::Config(format!("weight_window must be odd, got {}", self.weight_window)));
        }
        if !(self.weight_gain >= 0.0) {
            return Err(Error::Config("weight_gain must be >= 0".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Scalar breakdown of one loss evaluation (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub main: f64,
    pub aux: f64,
    pub wbce_main: f64,
    pub wiou_main: f64,
    pub wbce_aux: f64,
    pub wiou_aux: f64,
}

/// Differentiable total plus its breakdown.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: Tensor,
    pub report: LossReport,
}

fn check_binary(mask: &Tensor) -> Result<()> {
    for v in to_f64_vec(mask)? {
        if v != 0.0 && v != 1.0 {
            return Err(Error::NonBinaryMask(v));
        }
    }
    Ok(())
}

fn check_finite(x: &Tensor, what: &str) -> Result<()> {
    let s = x.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    if !s.is_finite() {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

fn check_same_shape(a: &Tensor, b: &Tensor, context: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(context, format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    a.dims4().map_err(|e| Error::shape(context, e.to_string()))?;
    Ok(())
}

/// `1 + gain * |boxmean_window(G) - G|` for a binary mask batch `(B, 1, H, W)`.
pub fn pixel_weights(mask: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    cfg.validate()?;
    mask.dims4().map_err(|e| Error::shape("pixel_weights", e.to_string()))?;
    check_binary(mask)?;
    let pooled = box_mean(mask, cfg.weight_window)?;
    Ok((((pooled - mask)?.abs()? * cfg.weight_gain)? + 1.0)?)
}

fn spatial_sum(x: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    Ok(x.reshape((b, ()))?.sum(D::Minus1)?)
}

/// Per-image weighted BCE `(B,)` from logits; stable form
/// `max(x, 0) - x g + ln(1 + exp(-|x|))`.
fn weighted_bce_per_image(logits: &Tensor, mask: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let bce = ((logits.relu()? - (logits * mask)?)? + ((logits.abs()?.neg()?.exp()? + 1.0)?.log()?))?;
    Ok((spatial_sum(&(weights * bce)?)? / spatial_sum(weights)?)?)
}

fn weighted_iou_per_image(logits: &Tensor, mask: &Tensor, weights: &Tensor, eps: f64) -> Result<Tensor> {
    let p = sigmoid(logits)?;
    let inter = spatial_sum(&((&p * mask)? * weights)?)?;
    let union = spatial_sum(&((&p + mask)? * weights)?)?;
    let ratio = ((&inter + eps)? / ((union - &inter)? + eps)?)?;
    Ok((ratio.neg()? + 1.0)?)
}

/// Weighted BCE, averaged over the batch.
pub fn weighted_bce(logits: &Tensor, mask: &Tensor, weights: &Tensor) -> Result<Tensor> {
    check_same_shape(logits, mask, "weighted_bce")?;
    check_same_shape(weights, mask, "weighted_bce")?;
    check_finite(logits, "weighted_bce logits")?;
    Ok(weighted_bce_per_image(logits, mask, weights)?.mean_all()?)
}

/// Weighted IoU loss `1 - (sum w p g + eps) / (sum w (p + g - p g) + eps)`,
/// averaged over the batch.
pub fn weighted_iou(logits: &Tensor, mask: &Tensor, weights: &Tensor, eps: f64) -> Result<Tensor> {
    check_same_shape(logits, mask, "weighted_iou")?;
    check_same_shape(weights, mask, "weighted_iou")?;
    check_finite(logits, "weighted_iou logits")?;
    Ok(weighted_iou_per_image(logits, mask, weights, eps)?.mean_all()?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// `L = (wIoU + wBCE)(P2, G) + (wIoU + wBCE)(P1, G)`.
pub fn total_loss(pred: &PredictionTriple, mask: &Tensor, cfg: &LossConfig) -> Result<LossOutput> {
    check_same_shape(&pred.p2, mask, "total_loss (P2 vs mask)")?;
    check_same_shape(&pred.p1, mask, "total_loss (P1 vs mask)")?;
    let weights = pixel_weights(mask, cfg)?;
    let wbce_main = weighted_bce(&pred.p2, mask, &weights)?;
    let wiou_main = weighted_iou(&pred.p2, mask, &weights, cfg.eps)?;
    let wbce_aux = weighted_bce(&pred.p1, mask, &weights)?;
    let wiou_aux = weighted_iou(&pred.p1, mask, &weights, cfg.eps)?;
    let main = (&wbce_main + &wiou_main)?;
    let aux = (&wbce_aux + &wiou_aux)?;
    let total = (&main + &aux)?;
    let report = LossReport {
        total: scalar(&total)?,
        main: scalar(&main)?,
        aux: scalar(&aux)?,
        wbce_main: scalar(&wbce_main)?,
        wiou_main: scalar(&wiou_main)?,
        wbce_aux: scalar(&wbce_aux)?,
        wiou_aux: scalar(&wiou_aux)?,
    };
    Ok(LossOutput { total, report })
}
