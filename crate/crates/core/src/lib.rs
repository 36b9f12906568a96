//! Polyp segmentation network: a pyramid vision transformer encoder with a
//! cascaded fusion / camouflage identification / similarity aggregation
//! decoder, the weighted structure loss, and finite-difference gradient checks.
//!
//! Tensors are `(B, C, H, W)` throughout. Parameters live in a
//! [`ParamStore`](params::ParamStore) keyed by dotted names, which is also
//! the checkpoint format.

pub mod backbone;
pub mod decoder;
pub mod error;
pub mod feature;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod ops;
pub mod params;

pub use backbone::{load_pretrained, Backbone, BackboneConfig, PyramidFeatures};
pub use decoder::{AblationVariant, DecoderConfig};
pub use error::{Error, Result};
pub use feature::{FeatureMap, ImageTensor};
pub use layers::Mode;
pub use loss::{total_loss, LossConfig, LossReport};
pub use model::{ForwardOutputs, ModelConfig, PolypPvt, PredictionTriple};
pub use params::{LoadReport, ParamStore};

pub use candle_core::{DType, Device, Tensor};
