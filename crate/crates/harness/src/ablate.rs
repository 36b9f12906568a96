//! Trains and scores decoder variants under one seed and one data split.

use std::fmt::Write as _;

use polyp_core::AblationVariant;
use polyp_metrics::DatasetScores;
use serde::{Deserialize, Serialize};

use crate::checkpoint::load_checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_datasets, EvalOptions};
use crate::train::train;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: AblationVariant,
    pub num_parameters: usize,
    pub final_loss: Option<f64>,
    pub scores: Vec<DatasetScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub base: String,
    pub results: Vec<VariantResult>,
}

/// Config for one variant: same everything, own output directory.
pub fn variant_config(base: &ExperimentConfig, variant: AblationVariant) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.model = cfg.model.with_variant(variant);
    cfg.name = format!("{}-{}", base.name, variant.tag());
    cfg.output_dir = base.output_dir.join(variant.tag());
    cfg
}

pub fn ablate(base: &ExperimentConfig, variants: &[AblationVariant]) -> Result<AblationReport> {
    if variants.is_empty() {
        return Err(Error::Config("no variants requested".into()));
    }
    let mut results = Vec::with_capacity(variants.len());
    for &variant in variants {
        let cfg = variant_config(base, variant);
        log::info!("ablation: training {}", cfg.name);
        let run = train(&cfg)?;
        let ckpt = ["best", "final", "init"]
            .iter()
            .find_map(|k| run.checkpoint(k))
            .ok_or_else(|| Error::Config(format!("{}: run produced no checkpoint", cfg.name)))?;
        let (model, _) = load_checkpoint(ckpt)?;
        let scores = evaluate_datasets(&model, &cfg.data.root, &cfg.data.test, &cfg.sample_config(), &EvalOptions::default())?;
        results.push(VariantResult {
            variant,
            num_parameters: run.num_parameters,
            final_loss: run.final_loss(),
            scores,
        });
    }
    Ok(AblationReport { base: base.name.clone(), results })
}

/// Rows are dataset x {mDic, mIoU}, one column per variant.
pub fn format_ablation(report: &AblationReport) -> String {
    let mut s = format!("{:<16}{:<8}", "Dataset", "Metric");
    for r in &report.results {
        write!(s, "{:>10}", r.variant.column()).unwrap();
    }
    s.push('\n');
    let datasets: Vec<&str> = report
        .results
        .first()
        .map(|r| r.scores.iter().map(|d| d.dataset.as_str()).collect())
        .unwrap_or_default();
    for (i, name) in datasets.iter().enumerate() {
        for (metric, pick) in [("mDic", 0usize), ("mIoU", 1)] {
            write!(s, "{:<16}{:<8}", name, metric).unwrap();
            for r in &report.results {
                let v = r.scores.get(i).map(|d| d.mean.to_array()[pick]).unwrap_or(f64::NAN);
                write!(s, "{v:>10.3}").unwrap();
            }
            s.push('\n');
        }
    }
    write!(s, "{:<24}", "Params").unwrap();
    for r in &report.results {
        write!(s, "{:>10}", r.num_parameters).unwrap();
    }
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use polyp_metrics::{aggregate, ImageScore, ScoreVector};

    fn result(variant: AblationVariant, dice: f64) -> VariantResult {
        let img = ImageScore { name: "a".into(), scores: ScoreVector { mDic: dice, mIoU: dice / 2.0, ..Default::default() } };
        VariantResult { variant, num_parameters: 10, final_loss: None, scores: vec![aggregate("set", vec![img], vec![], vec![])] }
    }

    #[test]
    fn single_variant_gives_single_column() {
        let t = format_ablation(&AblationReport { base: "b".into(), results: vec![result(AblationVariant::Full, 0.8)] });
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].ends_with("Final"));
        assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), ["set", "mDic", "0.800"]);
        assert_eq!(lines[2].split_whitespace().collect::<Vec<_>>(), ["set", "mIoU", "0.400"]);
    }

    #[test]
    fn columns_follow_request_order() {
        let t = format_ablation(&AblationReport {
            base: "b".into(),
            results: vec![result(AblationVariant::NoCfm, 0.1), result(AblationVariant::Full, 0.2)],
        });
        let head = t.lines().next().unwrap();
        assert!(head.find("w/o CFM").unwrap() < head.find("Final").unwrap());
    }

    #[test]
    fn variant_configs_are_isolated() {
        let base = ExperimentConfig::desk("/tmp/d");
        let c = variant_config(&base, AblationVariant::SamConv);
        assert_eq!(c.model.decoder.variant, AblationVariant::SamConv);
        assert_eq!(c.train, base.train);
        assert_eq!(c.output_dir, base.output_dir.join("sam_conv"));
    }
}
