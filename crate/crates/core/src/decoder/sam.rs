use candle_core::{Tensor, Var};

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::layers::{Conv2d, ConvInit, ConvUnit, Mode};
use crate::ops::{adaptive_avg_pool, resize_bilinear, softmax};
use crate::params::{Init, Scope};

use super::DecoderConfig;

/// What happens to the node states between projection and reprojection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeReasoning {
    /// Single graph-convolution layer with learned adjacency.
    Gcn,
    /// 1x1 convolution over node states.
    Conv,
    Identity,
}

#[derive(Debug, Clone)]
enum Reasoning {
    Gcn { adjacency: Var, adjacency_bias: Var, state: Var },
    Conv { weight: Var, bias: Var },
    Identity,
}

/// Intermediate tensors of one SAM pass, kept for inspection.
#[derive(Debug, Clone)]
pub struct SamTrace {
    /// `(B, state, h, w)`
    pub q: Tensor,
    /// `(B, state, h, w)`
    pub k: Tensor,
    /// Second-channel softmax map of `Wg(T2)` on the T1 grid, `(B, 1, h, w)`.
    pub t2_attention: Tensor,
    /// Node anchors `(B, nodes, state)`.
    pub v: Tensor,
    /// Correlation map `(B, nodes, h*w)`, each row a distribution over positions.
    pub f: Tensor,
    /// Node states after reasoning `(B, nodes, state)`.
    pub g: Tensor,
    /// Reprojected features `(B, state, h, w)`.
    pub y: Tensor,
}

/// Similarity aggregation: non-local correlation between T1 and a T2-weighted
/// node grid, graph reasoning over the nodes, and a residual back onto T1.
#[derive(Debug, Clone)]
pub struct Sam {
    wg: ConvUnit,
    theta: Conv2d,
    phi: Conv2d,
    reasoning: Reasoning,
    wz: Conv2d,
    channel: usize,
    pool: usize,
    nodes: usize,
    state: usize,
}

impl Sam {
    pub fn new(scope: &mut Scope, t2_channels: usize, cfg: &DecoderConfig, reasoning: NodeReasoning) -> Result<Self> {
        let (c, s) = (cfg.channel, cfg.sam_state);
        let n = cfg.sam_nodes * cfg.sam_nodes;
        let reasoning = match reasoning {
            NodeReasoning::Gcn => {
                let mut g = scope.sub("gcn");
                let bound_n = 1.0 / (n as f64).sqrt();
                let bound_s = 1.0 / (s as f64).sqrt();
                let mut adj = g.sub("adjacency");
                let adjacency = adj.param("weight", &[n, n], Init::Uniform(bound_n))?;
                let adjacency_bias = adj.param("bias", &[n], Init::Uniform(bound_n))?;
                let state = g.sub("state").param("weight", &[s, s], Init::Uniform(bound_s))?;
                Reasoning::Gcn { adjacency, adjacency_bias, state }
            }
            NodeReasoning::Conv => {
                let mut conv = scope.sub("node_conv");
                let bound = 1.0 / (s as f64).sqrt();
                Reasoning::Conv {
                    weight: conv.param("weight", &[s, s], Init::Uniform(bound))?,
                    bias: conv.param("bias", &[s], Init::Uniform(bound))?,
                }
            }
            NodeReasoning::Identity => Reasoning::Identity,
        };
        Ok(Self {
            wg: ConvUnit::new(&mut scope.sub("wg"), t2_channels, c, 1, 0)?,
            theta: Conv2d::new(&mut scope.sub("theta"), c, s, 1, 1, 0, true, ConvInit::Default)?,
            phi: Conv2d::new(&mut scope.sub("phi"), c, s, 1, 1, 0, true, ConvInit::Default)?,
            reasoning,
            wz: Conv2d::new(&mut scope.sub("wz"), s, c, 1, 1, 0, false, ConvInit::Default)?,
            channel: c,
            pool: cfg.sam_pool,
            nodes: cfg.sam_nodes,
            state: s,
        })
    }

    pub fn reasoning(&self) -> NodeReasoning {
        match self.reasoning {
            Reasoning::Gcn { .. } => NodeReasoning::Gcn,
            Reasoning::Conv { .. } => NodeReasoning::Conv,
            Reasoning::Identity => NodeReasoning::Identity,
        }
    }

    /// Graph layer on node-major states `(B, nodes, state)`:
    /// `ReLU(((A X + b) - X) W^T)`.
    fn reason(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, s) = x.dims3()?;
        match &self.reasoning {
            Reasoning::Identity => Ok(x.clone()),
            Reasoning::Conv { weight, bias } => Ok(x
                .reshape((b * n, s))?
                .matmul(&weight.t()?)?
                .broadcast_add(bias.as_tensor())?
                .reshape((b, n, s))?),
            Reasoning::Gcn { adjacency, adjacency_bias, state } => {
                let mixed = x
                    .transpose(1, 2)?
                    .contiguous()?
                    .reshape((b * s, n))?
                    .matmul(&adjacency.t()?)?
                    .reshape((b, s, n))?
                    .transpose(1, 2)?
                    .broadcast_add(&adjacency_bias.reshape((1, n, 1))?)?;
                let h = (mixed - x)?;
                Ok(h.contiguous()?
                    .reshape((b * n, s))?
                    .matmul(&state.t()?)?
                    .reshape((b, n, s))?
                    .relu()?)
            }
        }
    }

    pub fn forward(&self, t1: &FeatureMap, t2: &FeatureMap, mode: &mut Mode) -> Result<FeatureMap> {
        Ok(self.forward_traced(t1, t2, mode)?.0)
    }

    pub fn forward_traced(&self, t1: &FeatureMap, t2: &FeatureMap, mode: &mut Mode) -> Result<(FeatureMap, SamTrace)> {
        if t1.channels() != self.channel {
            return Err(Error::shape(
                "sam",
                format!("T1 has {} channels, expected {}", t1.channels(), self.channel),
            ));
        }
        let (b, _, h, w) = t1.tensor.dims4()?;
        let (s, side) = (self.state, self.nodes);
        let n_nodes = side * side;
        let positions = h * w;

        let q = self.theta.forward(&t1.tensor)?;
        let k = self.phi.forward(&t1.tensor)?;

        let reduced = self.wg.forward(&t2.tensor, mode)?;
        let aligned = resize_bilinear(&reduced, h, w)?;
        let t2_attention = softmax(&aligned, 1)?.narrow(1, 1, 1)?;

        let weighted = k.broadcast_mul(&t2_attention)?;
        let pooled = adaptive_avg_pool(&weighted, self.pool, self.pool)?;
        let offset = (self.pool - side) / 2;
        let v = pooled
            .narrow(2, offset, side)?
            .narrow(3, offset, side)?
            .contiguous()?
            .reshape((b, s, n_nodes))?
            .transpose(1, 2)?
            .contiguous()?;

        let k_flat = k.reshape((b, s, positions))?;
        let f = softmax(&v.matmul(&k_flat)?, 2)?;

        let q_flat = q.reshape((b, s, positions))?;
        let node_states = f.matmul(&q_flat.transpose(1, 2)?.contiguous()?)?;
        let g = self.reason(&node_states)?;

        let y = f
            .transpose(1, 2)?
            .contiguous()?
            .matmul(&g)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, s, h, w))?;
        let z = (&t1.tensor + self.wz.forward(&y)?)?;
        let trace = SamTrace { q, k, t2_attention, v, f, g, y };
        Ok((FeatureMap::new(z, t1.stride)?, trace))
    }
}
