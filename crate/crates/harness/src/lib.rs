//! Training, evaluation, ablation and plotting on top of the model, data
//! and metrics crates. The `polyp` binary is a thin CLI over this library.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod optim;
pub mod plot;
pub mod train;

pub use ablate::{ablate, format_ablation, variant_config, AblationReport, VariantResult};
pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path};
pub use config::{DataConfig, ExperimentConfig, SynthSpec, TrainConfig};
pub use error::{Error, Result};
pub use evaluate::{evaluate_datasets, evaluate_manifest, predict, EvalOptions};
pub use optim::{clip_global_norm, AdamW, AdamWConfig, ClipOutcome};
pub use plot::{plot_froc, plot_loss_curves};
pub use train::{prepare_data, train, train_on, CheckpointRecord, EpochRecord, IterationRecord, RunRecord};

use std::path::Path;

use polyp_metrics::{format_table, write_froc_csv, write_json, DatasetScores};

/// Writes `scores.json`, `table.txt` and one `froc_<dataset>.csv` per dataset.
pub fn write_report(out_dir: &Path, scores: &[DatasetScores]) -> Result<String> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    write_json(&out_dir.join("scores.json"), &scores)?;
    let table = format_table(scores);
    std::fs::write(out_dir.join("table.txt"), &table).map_err(|e| Error::file(out_dir.join("table.txt"), e))?;
    for d in scores {
        write_froc_csv(&out_dir.join(format!("froc_{}.csv", d.dataset)), &d.froc)?;
    }
    Ok(table)
}
