//! Parameterized building blocks: convolutions, normalization, linear maps.

use candle_core::{Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ops;
use crate::params::{Init, Scope};

/// Forward-pass mode. Training carries the generator that drives dropout and
/// drop-path so that runs are reproducible from a seed.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Inverted dropout on every element.
pub fn dropout(x: &Tensor, rate: f64, mode: &mut Mode) -> Result<Tensor> {
    let Mode::Train(rng) = mode else { return Ok(x.clone()) };
    if rate <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..x.elem_count())
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

/// Stochastic depth: drops the whole residual branch per sample.
pub fn drop_path(x: &Tensor, rate: f64, mode: &mut Mode) -> Result<Tensor> {
    let Mode::Train(rng) = mode else { return Ok(x.clone()) };
    if rate <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let b = x.dim(0)?;
    let mask: Vec<f64> = (0..b)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mut shape = vec![1; x.rank()];
    shape[0] = b;
    let mask = Tensor::from_vec(mask, shape, x.device())?.to_dtype(x.dtype())?;
    Ok(x.broadcast_mul(&mask)?)
}

#[derive(Debug, Clone, Copy)]
pub enum ConvInit {
    /// PyTorch's default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
    Default,
    /// He-normal on fan-out, zero bias (transformer backbone convention).
    FanOut,
    Zeros,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scope: &mut Scope,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: ConvInit,
    ) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        let fan_out = c_out * kernel * kernel;
        let (w_init, b_init) = match init {
            ConvInit::Default => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (Init::Uniform(bound), Init::Uniform(bound))
            }
            ConvInit::FanOut => (Init::Normal((2.0 / fan_out as f64).sqrt()), Init::Const(0.0)),
            ConvInit::Zeros => (Init::Const(0.0), Init::Const(0.0)),
        };
        let weight = scope.param("weight", &[c_out, c_in, kernel, kernel], w_init)?;
        let bias = if bias { Some(scope.param("bias", &[c_out], b_init)?) } else { None };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, k, _) = self.weight.dims4()?;
        let y = if k == 1 && self.stride == 1 && self.padding == 0 {
            // 1x1 convolution as a channel matmul.
            let (b, c, h, w) = x.dims4()?;
            let c_out = self.weight.dim(0)?;
            let wm = self.weight.reshape((c_out, c))?;
            let tokens = ops::to_tokens(x)?.reshape((b * h * w, c))?;
            let y = tokens.matmul(&wm.t()?)?.reshape((b, h * w, c_out))?;
            ops::from_tokens(&y, h, w)?
        } else {
            x.contiguous()?.conv2d(&self.weight, self.padding, self.stride, 1, 1)?
        };
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Batch normalization over `(B, C, H, W)` with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub weight: Var,
    pub bias: Var,
    pub running_mean: Var,
    pub running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(scope: &mut Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: scope.param("weight", &[channels], Init::Const(1.0))?,
            bias: scope.param("bias", &[channels], Init::Const(0.0))?,
            running_mean: scope.buffer("running_mean", &[channels], Init::Const(0.0))?,
            running_var: scope.buffer("running_var", &[channels], Init::Const(1.0))?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let shape = (1, c, 1, 1);
        let (mean, var) = if mode.is_train() {
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let n = (b * h * w) as f64;
            let unbiased = if n > 1.0 { (var.detach() * (n / (n - 1.0)))? } else { var.detach() };
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach().reshape(c)? * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))? + (unbiased.reshape(c)? * m)?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape(shape)?,
                self.running_var.as_tensor().reshape(shape)?,
            )
        };
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.weight.reshape(shape)?)?
            .broadcast_add(&self.bias.reshape(shape)?)?)
    }
}

/// Convolution (bias-free) followed by batch norm and ReLU.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvUnit {
    pub fn new(scope: &mut Scope, c_in: usize, c_out: usize, kernel: usize, padding: usize) -> Result<Self> {
        let conv = Conv2d::new(&mut scope.sub("conv"), c_in, c_out, kernel, 1, padding, false, ConvInit::Default)?;
        let bn = BatchNorm2d::new(&mut scope.sub("bn"), c_out)?;
        Ok(Self { conv, bn })
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(x)?, mode)?.relu()?)
    }
}

/// Affine map on the last dimension, weight stored `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl Linear {
    pub fn new(scope: &mut Scope, c_in: usize, c_out: usize, bias: bool) -> Result<Self> {
        Ok(Self {
            weight: scope.param("weight", &[c_out, c_in], Init::TruncNormal(0.02))?,
            bias: if bias { Some(scope.param("bias", &[c_out], Init::Const(0.0))?) } else { None },
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let c_in = *dims.last().expect("rank >= 1");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let mut y = x.contiguous()?.reshape((rows, c_in))?.matmul(&self.weight.t()?)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b.as_tensor())?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().expect("rank >= 1") = self.weight.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub weight: Var,
    pub bias: Var,
    eps: f64,
}

impl LayerNorm {
    pub fn new(scope: &mut Scope, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            weight: scope.param("weight", &[dim], Init::Const(1.0))?,
            bias: scope.param("bias", &[dim], Init::Const(0.0))?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::layer_norm(x, &self.weight, &self.bias, self.eps)
    }
}

/// Channel-wise max and mean, each keeping a singleton channel axis.
pub fn channel_max_mean(x: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((x.max_keepdim(1)?, x.mean_keepdim(1)?))
}

/// Global spatial max and mean pooling to `(B, C, 1, 1)`.
pub fn global_max_mean(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.contiguous()?.reshape((b, c, h * w))?;
    Ok((
        flat.max_keepdim(D::Minus1)?.reshape((b, c, 1, 1))?,
        flat.mean_keepdim(D::Minus1)?.reshape((b, c, 1, 1))?,
    ))
}
