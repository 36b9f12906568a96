//! Checkpoints are the flat safetensors map of the parameter store plus a
//! `.toml` sidecar holding the experiment config needed to rebuild the model.

use std::path::{Path, PathBuf};

use polyp_core::{DType, Device, PolypPvt};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("toml")
}

pub fn save_checkpoint(model: &PolypPvt, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    model.store().save(path)?;
    cfg.save(&sidecar_path(path))
}

/// Rebuilds the model described by the sidecar and loads every tensor strictly.
pub fn load_checkpoint(path: &Path) -> Result<(PolypPvt, ExperimentConfig)> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::file(&side, "checkpoint config sidecar not found"));
    }
    let cfg = ExperimentConfig::load(&side)?;
    let model = PolypPvt::new(&cfg.model, DType::F32, &Device::Cpu, cfg.train.seed)?;
    let report = model.store().load(path, "", true)?;
    log::info!("loaded {} tensors from {}", report.loaded.len(), path.display());
    Ok((model, cfg))
}
