use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::layers::{channel_max_mean, global_max_mean, Conv2d, ConvInit};
use crate::ops::sigmoid;
use crate::params::Scope;

/// `x * sigmoid(H(maxpool(x)) + H(avgpool(x)))` where `H` is a shared
/// bottleneck of two bias-free 1x1 convolutions around a ReLU.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    fc1: Conv2d,
    fc2: Conv2d,
}

impl ChannelAttention {
    pub fn new(scope: &mut Scope, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "channel attention: {channels} channels not divisible by reduction {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            fc1: Conv2d::new(&mut scope.sub("fc1"), channels, hidden, 1, 1, 0, false, ConvInit::Default)?,
            fc2: Conv2d::new(&mut scope.sub("fc2"), hidden, channels, 1, 1, 0, false, ConvInit::Default)?,
        })
    }

    fn shared(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.relu()?)
    }

    /// Per-channel gate `(B, C, 1, 1)` in (0, 1).
    pub fn gate(&self, x: &Tensor) -> Result<Tensor> {
        let (max, mean) = global_max_mean(x)?;
        sigmoid(&(self.shared(&max)? + self.shared(&mean)?)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_mul(&self.gate(x)?)?)
    }
}

/// `x * sigmoid(G(cat(max_c(x), mean_c(x))))` with `G` a bias-free 7x7
/// convolution, padding 3, from 2 channels to 1.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    conv: Conv2d,
}

impl SpatialAttention {
    pub fn new(scope: &mut Scope) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&mut scope.sub("conv"), 2, 1, 7, 1, 3, false, ConvInit::Default)?,
        })
    }

    pub fn gate(&self, x: &Tensor) -> Result<Tensor> {
        let (max, mean) = channel_max_mean(x)?;
        sigmoid(&self.conv.forward(&Tensor::cat(&[max, mean], 1)?)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_mul(&self.gate(x)?)?)
    }
}

/// Channel attention followed by spatial attention over X1, giving T2.
#[derive(Debug, Clone)]
pub struct Cim {
    pub channel: ChannelAttention,
    pub spatial: SpatialAttention,
}

impl Cim {
    pub fn new(scope: &mut Scope, channels: usize, reduction: usize) -> Result<Self> {
        Ok(Self {
            channel: ChannelAttention::new(&mut scope.sub("channel"), channels, reduction)?,
            spatial: SpatialAttention::new(&mut scope.sub("spatial"))?,
        })
    }

    pub fn forward(&self, x1: &FeatureMap) -> Result<FeatureMap> {
        let t = self.spatial.forward(&self.channel.forward(&x1.tensor)?)?;
        FeatureMap::new(t, x1.stride)
    }
}
