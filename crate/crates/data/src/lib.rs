//! Data side of training and evaluation: directory manifests, resized and
//! normalized samples, the rotation probe and a procedural polyp generator.

pub mod manifest;
pub mod rotate;
pub mod sample;
pub mod synth;

use std::path::PathBuf;

use thiserror::Error;

pub use manifest::{load_manifest, load_manifest_cached, DatasetManifest, Pair, Split};
pub use rotate::{rotate_eval, rotate_image, rotate_mask};
pub use sample::{collate, make_sample, scaled_size, Batch, Normalization, Sample, SampleConfig, SampleMeta, ScaleSampler};
pub use synth::{synth_dataset, SynthConfig};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset directory not found: {0}")]
    MissingDir(PathBuf),

    #[error("no mask for image '{stem}'")]
    MissingMask { stem: String },

    #[error("no image for mask '{stem}'")]
    MissingImage { stem: String },

    #[error("duplicate stem '{stem}' in {dir}")]
    DuplicateStem { stem: String, dir: PathBuf },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },

    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn image_err(path: impl Into<PathBuf>) -> impl FnOnce(image::ImageError) -> Error {
    let path = path.into();
    move |source| Error::Image { path, source }
}
