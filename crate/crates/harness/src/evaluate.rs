//! Test-time inference and scoring: resize to the model size, no
//! post-processing, sigmoid of the summed logits scored at native GT size.

use std::path::Path;

use candle_core::{Device, Tensor};
use ndarray::Array2;
use polyp_core::ops::{sigmoid, to_f64_vec};
use polyp_core::{ImageTensor, Mode, PolypPvt};
use polyp_data::{load_manifest_cached, make_sample, rotate_eval, DatasetManifest, Sample, SampleConfig};
use polyp_metrics::{finish, load_mask, score_pair, DatasetScores, ScoredImage};
use rayon::prelude::*;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Rotation applied to every test sample before inference.
    pub rotate_degrees: f64,
    /// Score the ground truth against itself instead of running the model.
    pub gt_bypass: bool,
    /// Images per forward pass.
    pub chunk: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { rotate_degrees: 0.0, gt_bypass: false, chunk: 8 }
    }
}

impl EvalOptions {
    fn rotates(&self) -> bool {
        self.rotate_degrees.rem_euclid(360.0) != 0.0
    }
}

pub(crate) fn batch_tensors(samples: &[Sample]) -> Result<(ImageTensor, Tensor)> {
    let b = polyp_data::collate(samples)?;
    let img = Tensor::from_vec(b.images, (b.batch, 3, b.height, b.width), &Device::Cpu)?;
    let mask = Tensor::from_vec(b.masks, (b.batch, 1, b.height, b.width), &Device::Cpu)?;
    Ok((ImageTensor::new(img)?, mask))
}

/// Sigmoid probability maps at the input resolution, one per sample.
pub fn predict(model: &PolypPvt, samples: &[Sample]) -> Result<Vec<Array2<f64>>> {
    let Some(first) = samples.first() else { return Ok(Vec::new()) };
    let (h, w) = first.size();
    let (img, _) = batch_tensors(samples)?;
    let pred = model.forward(&img, &mut Mode::Eval)?;
    let probs = to_f64_vec(&sigmoid(&pred.p_final)?)?;
    Ok(probs.chunks(h * w).map(|c| Array2::from_shape_vec((h, w), c.to_vec()).expect("h*w chunk")).collect())
}

/// Scores one dataset. Without rotation the prediction is compared with the
/// native-resolution mask. A rotated sample is compared with its rotated
/// mask at model resolution, since rotating the resized square input is not
/// a rigid motion of a non-square original.
pub fn evaluate_manifest(
    model: &PolypPvt,
    manifest: &DatasetManifest,
    sample_cfg: &SampleConfig,
    opts: &EvalOptions,
) -> Result<DatasetScores> {
    let mut scored: Vec<ScoredImage> = Vec::with_capacity(manifest.len());
    for chunk in manifest.pairs.chunks(opts.chunk.max(1)) {
        if opts.gt_bypass {
            let items: Vec<_> = chunk
                .par_iter()
                .map(|p| {
                    let gt = load_mask(&p.mask)?;
                    score_pair(p.stem.clone(), &gt.mapv(|b| if b { 1.0 } else { 0.0 }), &gt)
                })
                .collect::<polyp_metrics::Result<_>>()?;
            scored.extend(items);
            continue;
        }
        let mut samples = chunk
            .iter()
            .map(|p| make_sample(p, false, 1.0, sample_cfg, &manifest.name))
            .collect::<polyp_data::Result<Vec<_>>>()?;
        if opts.rotates() {
            samples = samples.iter().map(|s| rotate_eval(s, opts.rotate_degrees)).collect();
        }
        let preds = predict(model, &samples)?;
        let items: Vec<_> = chunk
            .par_iter()
            .zip(samples.par_iter())
            .zip(preds.par_iter())
            .map(|((p, s), pred)| {
                let gt = if opts.rotates() { s.mask.mapv(|v| v > 0.5) } else { load_mask(&p.mask)? };
                score_pair(p.stem.clone(), pred, &gt)
            })
            .collect::<polyp_metrics::Result<_>>()?;
        scored.extend(items);
    }
    Ok(finish(&manifest.name, scored, Vec::new()))
}

/// Loads each named dataset under `root` and scores it.
pub fn evaluate_datasets(
    model: &PolypPvt,
    root: &Path,
    datasets: &[String],
    sample_cfg: &SampleConfig,
    opts: &EvalOptions,
) -> Result<Vec<DatasetScores>> {
    datasets
        .iter()
        .map(|name| {
            let manifest = load_manifest_cached(root, name)?;
            log::info!("evaluating {} ({} images)", name, manifest.len());
            evaluate_manifest(model, &manifest, sample_cfg, opts)
        })
        .collect()
}
