//! The training loop and its run record.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use polyp_core::{total_loss, DType, Device, LossReport, Mode, PolypPvt};
use polyp_data::{load_manifest_cached, make_sample, synth_dataset, DatasetManifest, ScaleSampler};
use polyp_metrics::ScoreVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluate::{batch_tensors, evaluate_manifest, EvalOptions};
use crate::optim::{clip_global_norm, gather, AdamW, AdamWConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub scale: f64,
    pub size: usize,
    pub lr: f64,
    pub loss: LossReport,
    /// Global gradient norm before and after clipping.
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub iterations: usize,
    /// Mean of the iteration reports.
    pub loss: LossReport,
    pub val: Option<ScoreVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub kind: String,
    pub epoch: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub num_parameters: usize,
    pub train_images: usize,
    pub val_images: usize,
    pub epochs: Vec<EpochRecord>,
    pub iterations: Vec<IterationRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub best_val_mdic: Option<f64>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::file(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::file(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.loss.total)
    }

    pub fn checkpoint(&self, kind: &str) -> Option<&Path> {
        self.checkpoints.iter().rev().find(|c| c.kind == kind).map(|c| c.path.as_path())
    }
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    if reports.is_empty() {
        return LossReport::default();
    }
    let n = reports.len() as f64;
    let sum = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    LossReport {
        total: sum(|r| r.total),
        main: sum(|r| r.main),
        aux: sum(|r| r.aux),
        wbce_main: sum(|r| r.wbce_main),
        wiou_main: sum(|r| r.wiou_main),
        wbce_aux: sum(|r| r.wbce_aux),
        wiou_aux: sum(|r| r.wiou_aux),
    }
}

/// Training and validation manifests. Without a named validation set a
/// held-out share of the training data is used, or the training data itself
/// when it is too small to split.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    let data = &cfg.data;
    if let (Some(spec), Some(synth)) = (&data.synthetic, cfg.synth_config()) {
        synth_dataset(&data.root, &data.train, spec.n, spec.seed, &synth)?;
    }
    let train = load_manifest_cached(&data.root, &data.train)?;
    if train.is_empty() {
        return Err(Error::Config(format!("training set '{}' under {} is empty", data.train, data.root.display())));
    }
    if let Some(val) = &data.val {
        return Ok((train, load_manifest_cached(&data.root, val)?));
    }
    if train.len() >= 10 && cfg.train.val_fraction > 0.0 {
        return Ok(train.holdout(cfg.train.val_fraction, cfg.train.seed));
    }
    log::warn!("{} images: validating on the training set", train.len());
    Ok((train.clone(), train))
}

struct JsonLog(BufWriter<File>);

impl JsonLog {
    fn create(path: &Path) -> Result<Self> {
        Ok(Self(BufWriter::new(File::create(path).map_err(|e| Error::file(path, e))?)))
    }

    fn write(&mut self, value: &serde_json::Value) {
        let line = serde_json::to_string(value).expect("json value");
        if let Err(e) = writeln!(self.0, "{line}").and_then(|_| self.0.flush()) {
            log::warn!("log write failed: {e}");
        }
    }
}

/// Trains `cfg` end to end, writing `config.toml`, `train.jsonl`,
/// checkpoints and `run.json` under `cfg.output_dir`.
pub fn train(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let (train_set, val_set) = prepare_data(cfg)?;
    train_on(cfg, &train_set, &val_set, started)
}

pub fn train_on(cfg: &ExperimentConfig, train_set: &DatasetManifest, val_set: &DatasetManifest, started: Instant) -> Result<RunRecord> {
    let tc = &cfg.train;
    if train_set.is_empty() {
        return Err(Error::Config("training manifest is empty".into()));
    }
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    cfg.save(&out.join("config.toml"))?;
    let mut log = JsonLog::create(&out.join("train.jsonl"))?;

    let model = PolypPvt::new(&cfg.model, DType::F32, &Device::Cpu, tc.seed)?;
    let vars: Vec<_> = model.store().trainable().map(|(_, v)| v.clone()).collect();
    let mut opt = AdamW::new(vars, AdamWConfig { weight_decay: tc.weight_decay, ..AdamWConfig::default() })?;
    let sample_cfg = cfg.sample_config();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(1));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(2));
    let mut scales = ScaleSampler::new(sample_cfg.scales.clone(), tc.seed.wrapping_add(3));

    let mut record = RunRecord {
        config: cfg.clone(),
        num_parameters: model.store().num_parameters(),
        train_images: train_set.len(),
        val_images: val_set.len(),
        epochs: Vec::new(),
        iterations: Vec::new(),
        checkpoints: Vec::new(),
        best_val_mdic: None,
        wall_clock_secs: 0.0,
    };
    log::info!(
        "{}: {} parameters, {} train / {} val images",
        cfg.name,
        record.num_parameters,
        train_set.len(),
        val_set.len()
    );

    let save = |record: &mut RunRecord, kind: &str, epoch: usize| -> Result<()> {
        let path = out.join(format!("{kind}.safetensors"));
        save_checkpoint(&model, cfg, &path)?;
        record.checkpoints.push(CheckpointRecord { kind: kind.into(), epoch, path });
        Ok(())
    };
    if tc.epochs == 0 {
        save(&mut record, "init", 0)?;
    }

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut iteration = 0usize;
    let budget = tc.max_iterations.unwrap_or(usize::MAX);
    'epochs: for epoch in 1..=tc.epochs {
        let lr = tc.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut reports = Vec::new();
        for idx in order.chunks(tc.batch) {
            if iteration >= budget {
                break;
            }
            let scale = scales.next_scale();
            let samples = idx
                .iter()
                .map(|&i| make_sample(&train_set.pairs[i], true, scale, &sample_cfg, &train_set.name))
                .collect::<polyp_data::Result<Vec<_>>>()?;
            let (img, mask) = batch_tensors(&samples)?;
            let pred = model.forward(&img, &mut Mode::Train(&mut noise_rng))?;
            let loss = match total_loss(&pred, &mask, &cfg.loss) {
                Ok(l) if l.report.total.is_finite() => l,
                Ok(l) => return Err(diverged(&mut log, iteration, epoch, l.report.total)),
                Err(polyp_core::Error::NonFinite(what)) => {
                    log::error!("non-finite {what}");
                    return Err(diverged(&mut log, iteration, epoch, f64::NAN));
                }
                Err(e) => return Err(e.into()),
            };
            let grads = loss.total.backward()?;
            let mut g = gather(&grads, opt.vars());
            let clip = clip_global_norm(&mut g, tc.clip)?;
            if !clip.norm.is_finite() {
                return Err(diverged(&mut log, iteration, epoch, clip.norm));
            }
            opt.step(&g, lr)?;
            let rec = IterationRecord {
                iteration,
                epoch,
                scale,
                size: img.height(),
                lr,
                loss: loss.report,
                grad_norm: clip.norm,
                clipped_norm: clip.clipped_norm,
            };
            log.write(&serde_json::json!({ "event": "iteration", "record": &rec }));
            reports.push(rec.loss);
            record.iterations.push(rec);
            iteration += 1;
        }
        let stopping = iteration >= budget || epoch == tc.epochs;
        let val = if epoch % tc.eval_every == 0 || stopping {
            let scores = evaluate_manifest(&model, val_set, &sample_cfg, &EvalOptions::default())?;
            Some(scores.mean)
        } else {
            None
        };
        let summary = EpochRecord { epoch, lr, iterations: reports.len(), loss: mean_report(&reports), val };
        log.write(&serde_json::json!({ "event": "epoch", "record": &summary }));
        log::info!(
            "epoch {epoch}: loss {:.4}{}",
            summary.loss.total,
            val.map(|v| format!(", val mDic {:.4}", v.mDic)).unwrap_or_default()
        );
        if let Some(v) = val {
            if record.best_val_mdic.is_none_or(|b| v.mDic > b) {
                record.best_val_mdic = Some(v.mDic);
                save(&mut record, "best", epoch)?;
            }
        }
        record.epochs.push(summary);
        if stopping {
            break 'epochs;
        }
    }
    if tc.epochs > 0 {
        let last = record.epochs.last().map_or(0, |e| e.epoch);
        save(&mut record, "final", last)?;
    }
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    record.save(&out.join("run.json"))?;
    Ok(record)
}

fn diverged(log: &mut JsonLog, iteration: usize, epoch: usize, value: f64) -> Error {
    log.write(&serde_json::json!({ "event": "diverged", "iteration": iteration, "epoch": epoch, "value": value.to_string() }));
    log::error!("loss diverged at iteration {iteration} (epoch {epoch})");
    Error::Divergence { iteration, epoch, value }
}

/// Mean mDic of `model` on a manifest, at model resolution.
pub fn mdic(model: &PolypPvt, manifest: &DatasetManifest, cfg: &ExperimentConfig) -> Result<f64> {
    Ok(evaluate_manifest(model, manifest, &cfg.sample_config(), &EvalOptions::default())?.mean.mDic)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_reports() {
        let a = LossReport { total: 1.0, main: 2.0, ..Default::default() };
        let b = LossReport { total: 3.0, main: 0.0, ..Default::default() };
        let m = mean_report(&[a, b]);
        assert_eq!((m.total, m.main), (2.0, 1.0));
        assert_eq!(mean_report(&[]), LossReport::default());
    }
}
