//! Pyramid vision transformer encoder (PVTv2 layout).
//!
//! Four stages, each an overlapping patch embedding followed by transformer
//! blocks with spatial-reduction attention and a convolutional feed-forward.
//! Stage `i` emits a map at stride `2^(i+1)` with `embed_dims[i-1]` channels.

use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, ImageTensor};
use crate::layers::{drop_path, dropout, Conv2d, ConvInit, LayerNorm, Linear, Mode};
use crate::ops;
use crate::params::{Init, LoadReport, ParamStore, Scope};

pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub patch_size: usize,
    pub embed_dims: [usize; 4],
    pub num_heads: [usize; 4],
    pub mlp_ratios: [usize; 4],
    pub depths: [usize; 4],
    pub sr_ratios: [usize; 4],
    pub drop_rate: f64,
    pub drop_path_rate: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            patch_size: 4,
            embed_dims: [64, 128, 320, 512],
            num_heads: [1, 2, 5, 8],
            mlp_ratios: [8, 8, 4, 4],
            depths: [3, 4, 18, 3],
            sr_ratios: [8, 4, 2, 1],
            drop_rate: 0.0,
            drop_path_rate: 0.1,
        }
    }
}

impl BackboneConfig {
    /// Small encoder for CPU-scale experiments and tests.
    pub fn desk() -> Self {
        Self {
            embed_dims: [16, 32, 48, 64],
            num_heads: [1, 2, 3, 4],
            mlp_ratios: [4, 4, 4, 4],
            depths: [2, 2, 2, 2],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("embed_dims", self.embed_dims),
            ("num_heads", self.num_heads),
            ("mlp_ratios", self.mlp_ratios),
            ("depths", self.depths),
            ("sr_ratios", self.sr_ratios),
        ];
        for (name, list) in lists {
            if list.contains(&0) {
                return Err(Error::Config(format!("{name} entries must be positive: {list:?}")));
            }
        }
        for i in 0..4 {
            if !self.embed_dims[i].is_multiple_of(self.num_heads[i]) {
                return Err(Error::Config(format!(
                    "stage {}: embed dim {} not divisible by {} heads",
                    i + 1,
                    self.embed_dims[i],
                    self.num_heads[i]
                )));
            }
        }
        if self.patch_size != 4 {
            return Err(Error::Config(format!(
                "patch_size {} unsupported: the first stage always downsamples by 4",
                self.patch_size
            )));
        }
        if !(0.0..1.0).contains(&self.drop_rate) || !(0.0..1.0).contains(&self.drop_path_rate) {
            return Err(Error::Config("drop rates must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Linearly increasing drop-path rates over all blocks.
    pub fn drop_path_schedule(&self) -> Vec<f64> {
        let total: usize = self.depths.iter().sum();
        if total <= 1 {
            return vec![0.0; total];
        }
        (0..total)
            .map(|i| self.drop_path_rate * i as f64 / (total - 1) as f64)
            .collect()
    }

    pub fn stage_stride(stage: usize) -> usize {
        1 << (stage + 1)
    }
}

/// Overlapping patch embedding: strided convolution then layer norm.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    proj: Conv2d,
    norm: LayerNorm,
    stage: usize,
    stride: usize,
}

impl PatchEmbed {
    pub fn new(scope: &mut Scope, stage: usize, c_in: usize, c_out: usize) -> Result<Self> {
        let (kernel, stride, padding) = if stage == 1 { (7, 4, 3) } else { (3, 2, 1) };
        Ok(Self {
            proj: Conv2d::new(&mut scope.sub("proj"), c_in, c_out, kernel, stride, padding, true, ConvInit::FanOut)?,
            norm: LayerNorm::new(&mut scope.sub("norm"), c_out, LN_EPS)?,
            stage,
            stride,
        })
    }

    /// Returns layer-normalized tokens `(B, H'*W', C)` and the grid size.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, usize, usize)> {
        let (_, _, h, w) = x.dims4()?;
        if h % self.stride != 0 || w % self.stride != 0 {
            return Err(Error::shape(
                format!("patch embedding of stage {}", self.stage),
                format!("spatial size {h}x{w} not divisible by stride {}", self.stride),
            ));
        }
        let y = self.proj.forward(x)?;
        let (_, _, oh, ow) = y.dims4()?;
        let tokens = self.norm.forward(&ops::to_tokens(&y)?)?;
        Ok((tokens, oh, ow))
    }
}

/// Multi-head attention whose keys and values come from a grid reduced by
/// `sr_ratio` (strided convolution + layer norm).
#[derive(Debug, Clone)]
pub struct SrAttention {
    q: Linear,
    kv: Linear,
    proj: Linear,
    reduction: Option<(Conv2d, LayerNorm)>,
    heads: usize,
    sr_ratio: usize,
    drop_rate: f64,
}

impl SrAttention {
    pub fn new(scope: &mut Scope, dim: usize, heads: usize, sr_ratio: usize, drop_rate: f64) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("dim {dim} not divisible by {heads} heads")));
        }
        if sr_ratio == 0 {
            return Err(Error::Config("sr_ratio must be >= 1".into()));
        }
        let reduction = if sr_ratio > 1 {
            Some((
                Conv2d::new(&mut scope.sub("sr"), dim, dim, sr_ratio, sr_ratio, 0, true, ConvInit::FanOut)?,
                LayerNorm::new(&mut scope.sub("norm"), dim, LN_EPS)?,
            ))
        } else {
            None
        };
        Ok(Self {
            q: Linear::new(&mut scope.sub("q"), dim, dim, true)?,
            kv: Linear::new(&mut scope.sub("kv"), dim, 2 * dim, true)?,
            proj: Linear::new(&mut scope.sub("proj"), dim, dim, true)?,
            reduction,
            heads,
            sr_ratio,
            drop_rate,
        })
    }

    /// Size of the key/value grid for a `h x w` query grid.
    pub fn kv_grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if !h.is_multiple_of(self.sr_ratio) || !w.is_multiple_of(self.sr_ratio) {
            return Err(Error::shape(
                "spatial-reduction attention",
                format!("grid {h}x{w} not divisible by sr_ratio {}", self.sr_ratio),
            ));
        }
        Ok((h / self.sr_ratio, w / self.sr_ratio))
    }

    fn keys_values(&self, x: &Tensor, h: usize, w: usize) -> Result<(Tensor, Tensor)> {
        let (b, _, c) = x.dims3()?;
        let (kh, kw) = self.kv_grid(h, w)?;
        let source = match &self.reduction {
            Some((conv, norm)) => {
                let grid = ops::from_tokens(x, h, w)?;
                norm.forward(&ops::to_tokens(&conv.forward(&grid)?)?)?
            }
            None => x.clone(),
        };
        let m = kh * kw;
        let d = c / self.heads;
        let kv = self
            .kv
            .forward(&source)?
            .reshape((b, m, 2, self.heads, d))?
            .permute((2, 0, 3, 1, 4))?;
        let k = kv.get(0)?.contiguous()?;
        let v = kv.get(1)?.contiguous()?;
        Ok((k, v))
    }

    /// Attention probabilities `(B, heads, N, M)`.
    pub fn attention_weights(&self, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let (b, n, c) = x.dims3()?;
        let d = c / self.heads;
        let q = self.q.forward(x)?.reshape((b, n, self.heads, d))?.transpose(1, 2)?.contiguous()?;
        let (k, _) = self.keys_values(x, h, w)?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * (d as f64).powf(-0.5))?;
        ops::softmax(&scores, 3)
    }

    pub fn forward(&self, x: &Tensor, h: usize, w: usize, mode: &mut Mode) -> Result<Tensor> {
        let (b, n, c) = x.dims3()?;
        if c % self.heads != 0 {
            return Err(Error::shape("spatial-reduction attention", format!("{c} channels, {} heads", self.heads)));
        }
        let d = c / self.heads;
        let q = self.q.forward(x)?.reshape((b, n, self.heads, d))?.transpose(1, 2)?.contiguous()?;
        let (k, v) = self.keys_values(x, h, w)?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * (d as f64).powf(-0.5))?;
        let attn = ops::softmax(&scores, 3)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, n, c))?;
        dropout(&self.proj.forward(&out)?, self.drop_rate, mode)
    }
}

/// Feed-forward with a depthwise 3x3 convolution between the two linear maps.
#[derive(Debug, Clone)]
pub struct MixFfn {
    fc1: Linear,
    dw_weight: candle_core::Var,
    dw_bias: candle_core::Var,
    fc2: Linear,
    drop_rate: f64,
}

impl MixFfn {
    pub fn new(scope: &mut Scope, dim: usize, hidden: usize, drop_rate: f64) -> Result<Self> {
        let mut dw = scope.sub("dwconv");
        let dw_weight = dw.param("weight", &[hidden, 1, 3, 3], Init::Normal((2.0 / 9.0f64).sqrt()))?;
        let dw_bias = dw.param("bias", &[hidden], Init::Const(0.0))?;
        Ok(Self {
            fc1: Linear::new(&mut scope.sub("fc1"), dim, hidden, true)?,
            dw_weight,
            dw_bias,
            fc2: Linear::new(&mut scope.sub("fc2"), hidden, dim, true)?,
            drop_rate,
        })
    }

    pub fn forward(&self, x: &Tensor, h: usize, w: usize, mode: &mut Mode) -> Result<Tensor> {
        let hidden = self.fc1.forward(x)?;
        let grid = ops::from_tokens(&hidden, h, w)?;
        let mixed = ops::depthwise_conv3x3(&grid, &self.dw_weight, Some(&self.dw_bias))?;
        let act = ops::to_tokens(&mixed)?.gelu_erf()?;
        let act = dropout(&act, self.drop_rate, mode)?;
        dropout(&self.fc2.forward(&act)?, self.drop_rate, mode)
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    norm1: LayerNorm,
    attn: SrAttention,
    norm2: LayerNorm,
    mlp: MixFfn,
    drop_path: f64,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scope: &mut Scope,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        sr_ratio: usize,
        drop_rate: f64,
        drop_path: f64,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(&mut scope.sub("norm1"), dim, LN_EPS)?,
            attn: SrAttention::new(&mut scope.sub("attn"), dim, heads, sr_ratio, drop_rate)?,
            norm2: LayerNorm::new(&mut scope.sub("norm2"), dim, LN_EPS)?,
            mlp: MixFfn::new(&mut scope.sub("mlp"), dim, dim * mlp_ratio, drop_rate)?,
            drop_path,
        })
    }

    pub fn attention(&self) -> &SrAttention {
        &self.attn
    }

    pub fn forward(&self, x: &Tensor, h: usize, w: usize, mode: &mut Mode) -> Result<Tensor> {
        let a = self.attn.forward(&self.norm1.forward(x)?, h, w, mode)?;
        let x = (x + drop_path(&a, self.drop_path, mode)?)?;
        let m = self.mlp.forward(&self.norm2.forward(&x)?, h, w, mode)?;
        Ok((&x + drop_path(&m, self.drop_path, mode)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub embed: PatchEmbed,
    pub blocks: Vec<Block>,
    norm: LayerNorm,
    index: usize,
}

impl Stage {
    pub fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<FeatureMap> {
        let (mut tokens, h, w) = self.embed.forward(x)?;
        for block in &self.blocks {
            tokens = block.forward(&tokens, h, w, mode)?;
        }
        let grid = ops::from_tokens(&self.norm.forward(&tokens)?, h, w)?;
        FeatureMap::new(grid, BackboneConfig::stage_stride(self.index))
    }
}

/// The four pyramid maps `X1..X4` at strides 4, 8, 16, 32.
#[derive(Debug, Clone)]
pub struct PyramidFeatures {
    pub x1: FeatureMap,
    pub x2: FeatureMap,
    pub x3: FeatureMap,
    pub x4: FeatureMap,
}

impl PyramidFeatures {
    pub fn as_array(&self) -> [&FeatureMap; 4] {
        [&self.x1, &self.x2, &self.x3, &self.x4]
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub stages: Vec<Stage>,
    config: BackboneConfig,
}

impl Backbone {
    /// Builds the encoder under `scope` (conventionally the `backbone` prefix).
    pub fn new(scope: &mut Scope, config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let schedule = config.drop_path_schedule();
        let mut offset = 0;
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let index = i + 1;
            let mut s = scope.sub(&format!("stage{index}"));
            let c_in = if i == 0 { 3 } else { config.embed_dims[i - 1] };
            let dim = config.embed_dims[i];
            let embed = PatchEmbed::new(&mut s.sub("patch_embed"), index, c_in, dim)?;
            let blocks = (0..config.depths[i])
                .map(|j| {
                    Block::new(
                        &mut s.sub(&format!("block{j}")),
                        dim,
                        config.num_heads[i],
                        config.mlp_ratios[i],
                        config.sr_ratios[i],
                        config.drop_rate,
                        schedule[offset + j],
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            offset += config.depths[i];
            let norm = LayerNorm::new(&mut s.sub("norm"), dim, LN_EPS)?;
            stages.push(Stage { embed, blocks, norm, index });
        }
        Ok(Self {
            stages,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn forward(&self, img: &ImageTensor, mode: &mut Mode) -> Result<PyramidFeatures> {
        let mut x = img.tensor().clone();
        let mut maps = Vec::with_capacity(4);
        for stage in &self.stages {
            let fm = stage.forward(&x, mode)?;
            x = fm.tensor.clone();
            maps.push(fm);
        }
        let mut it = maps.into_iter();
        Ok(PyramidFeatures {
            x1: it.next().expect("4 stages"),
            x2: it.next().expect("4 stages"),
            x3: it.next().expect("4 stages"),
            x4: it.next().expect("4 stages"),
        })
    }
}

/// Loads every `backbone.*` entry of `store` from a checkpoint file.
///
/// Any name or shape disagreement with the configured encoder is an error
/// that lists the offending parameters.
pub fn load_pretrained(store: &ParamStore, weight_file: impl AsRef<Path>) -> Result<LoadReport> {
    store.load(weight_file, "backbone.", true)
}
