//! Full segmentation network: encoder, channel reduction, decoder wiring and
//! the two prediction heads.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, PyramidFeatures};
use crate::decoder::{AblationVariant, Cfm, Cim, DecoderConfig, Sam};
use crate::error::Result;
use crate::feature::{FeatureMap, ImageTensor};
use crate::layers::{Conv2d, ConvInit, ConvUnit, Mode};
use crate::ops::resize_bilinear;
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            backbone: BackboneConfig::desk(),
            decoder: DecoderConfig::desk(),
        }
    }

    pub fn with_variant(mut self, variant: AblationVariant) -> Self {
        self.decoder.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.decoder.validate(self.backbone.embed_dims[0])
    }
}

/// Auxiliary (CFM) logits, main (SAM) logits and their sum, all `(B, 1, H, W)`.
#[derive(Debug, Clone)]
pub struct PredictionTriple {
    pub p1: Tensor,
    pub p2: Tensor,
    pub p_final: Tensor,
}

/// Every intermediate map of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    pub features: PyramidFeatures,
    /// X2', X3', X4'.
    pub reduced: [FeatureMap; 3],
    pub t1: FeatureMap,
    pub t2: FeatureMap,
    pub z: FeatureMap,
    pub prediction: PredictionTriple,
}

#[derive(Debug, Clone)]
enum Fusion {
    Sam(Sam),
    /// `Z = T1 + resize(F(T2))`, the SAM-free ablation.
    Add(ConvUnit),
}

/// The multi-scale reduction units producing X2', X3', X4'.
#[derive(Debug, Clone)]
pub struct ChannelReducer {
    units: [ConvUnit; 3],
}

impl ChannelReducer {
    pub fn new(scope: &mut crate::params::Scope, in_channels: [usize; 3], channel: usize) -> Result<Self> {
        let names = ["x2", "x3", "x4"];
        let mut units = Vec::with_capacity(3);
        for (name, c_in) in names.iter().zip(in_channels) {
            units.push(ConvUnit::new(&mut scope.sub(name), c_in, channel, 3, 1)?);
        }
        Ok(Self {
            units: units.try_into().expect("three units"),
        })
    }

    pub fn forward(&self, x2: &FeatureMap, x3: &FeatureMap, x4: &FeatureMap, mode: &mut Mode) -> Result<[FeatureMap; 3]> {
        Ok([
            FeatureMap::new(self.units[0].forward(&x2.tensor, mode)?, x2.stride)?,
            FeatureMap::new(self.units[1].forward(&x3.tensor, mode)?, x3.stride)?,
            FeatureMap::new(self.units[2].forward(&x4.tensor, mode)?, x4.stride)?,
        ])
    }
}

#[derive(Debug, Clone)]
pub struct PolypPvt {
    store: ParamStore,
    config: ModelConfig,
    backbone: Backbone,
    reduce: ChannelReducer,
    cfm: Option<Cfm>,
    cim: Option<Cim>,
    fusion: Fusion,
    head_p1: Conv2d,
    head_p2: Conv2d,
}

impl PolypPvt {
    /// Builds the network with parameters drawn from a generator seeded by `seed`.
    pub fn new(config: &ModelConfig, dtype: DType, device: &Device, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(dtype, device.clone());
        let dims = config.backbone.embed_dims;
        let dec = &config.decoder;
        let variant = dec.variant;
        let mut root = store.root(&mut rng);

        let backbone = Backbone::new(&mut root.sub("backbone"), &config.backbone)?;
        let reduce = ChannelReducer::new(&mut root.sub("reduce"), [dims[1], dims[2], dims[3]], dec.channel)?;
        let cfm = if variant.uses_cfm() {
            Some(Cfm::new(&mut root.sub("cfm"), dec.channel)?)
        } else {
            None
        };
        let cim = if variant.uses_cim() {
            Some(Cim::new(&mut root.sub("cim"), dims[0], dec.cim_reduction)?)
        } else {
            None
        };
        let fusion = if variant.uses_sam() {
            Fusion::Sam(Sam::new(&mut root.sub("sam"), dims[0], dec, variant.node_reasoning())?)
        } else {
            Fusion::Add(ConvUnit::new(&mut root.sub("fuse").sub("t2_reduce"), dims[0], dec.channel, 1, 0)?)
        };
        let mut head = root.sub("head");
        let head_p1 = Conv2d::new(&mut head.sub("p1"), dec.channel, 1, 1, 1, 0, true, ConvInit::Default)?;
        let head_p2 = Conv2d::new(&mut head.sub("p2"), dec.channel, 1, 1, 1, 0, true, ConvInit::Default)?;

        Ok(Self {
            store,
            config: config.clone(),
            backbone,
            reduce,
            cfm,
            cim,
            fusion,
            head_p1,
            head_p2,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> AblationVariant {
        self.config.decoder.variant
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn forward(&self, img: &ImageTensor, mode: &mut Mode) -> Result<PredictionTriple> {
        Ok(self.forward_detailed(img, mode)?.prediction)
    }

    pub fn forward_detailed(&self, img: &ImageTensor, mode: &mut Mode) -> Result<ForwardOutputs> {
        let features = self.backbone.forward(img, mode)?;
        let reduced = self.reduce.forward(&features.x2, &features.x3, &features.x4, mode)?;
        let [x2, x3, x4] = &reduced;

        let t1 = match &self.cfm {
            Some(cfm) => cfm.forward(x2, x3, x4, mode)?,
            None => {
                let (h, w) = (x2.height(), x2.width());
                let sum = ((&x2.tensor + resize_bilinear(&x3.tensor, h, w)?)? + resize_bilinear(&x4.tensor, h, w)?)?;
                FeatureMap::new(sum, x2.stride)?
            }
        };
        let t2 = match &self.cim {
            Some(cim) => cim.forward(&features.x1)?,
            None => features.x1.clone(),
        };
        let z = match &self.fusion {
            Fusion::Sam(sam) => sam.forward(&t1, &t2, mode)?,
            Fusion::Add(unit) => {
                let low = resize_bilinear(&unit.forward(&t2.tensor, mode)?, t1.height(), t1.width())?;
                FeatureMap::new((&t1.tensor + low)?, t1.stride)?
            }
        };

        let (h, w) = (img.height(), img.width());
        let p1 = resize_bilinear(&self.head_p1.forward(&t1.tensor)?, h, w)?;
        let p2 = resize_bilinear(&self.head_p2.forward(&z.tensor)?, h, w)?;
        let p_final = (&p1 + &p2)?;
        Ok(ForwardOutputs {
            features,
            reduced,
            t1,
            t2,
            z,
            prediction: PredictionTriple { p1, p2, p_final },
        })
    }
}
