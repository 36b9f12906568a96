use candle_core::Tensor;

use crate::error::{Error, Result};

/// A batched activation `(B, C, H, W)` together with its spatial stride
/// relative to the input image.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub tensor: Tensor,
    pub stride: usize,
}

impl FeatureMap {
    pub fn new(tensor: Tensor, stride: usize) -> Result<Self> {
        tensor.dims4().map_err(|e| Error::shape("FeatureMap", e.to_string()))?;
        Ok(Self { tensor, stride })
    }

    pub fn batch(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.tensor.dims()[1]
    }

    pub fn height(&self) -> usize {
        self.tensor.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims()[3]
    }

    /// `(height, width, channels)`, the layout used in documentation.
    pub fn hwc(&self) -> (usize, usize, usize) {
        (self.height(), self.width(), self.channels())
    }
}

/// Normalized RGB input batch `(B, 3, H, W)` with `H` and `W` multiples of 32.
#[derive(Debug, Clone)]
pub struct ImageTensor {
    tensor: Tensor,
}

impl ImageTensor {
    pub fn new(tensor: Tensor) -> Result<Self> {
        let (_, c, h, w) = tensor
            .dims4()
            .map_err(|e| Error::shape("ImageTensor", e.to_string()))?;
        if c != 3 {
            return Err(Error::shape("ImageTensor", format!("expected 3 channels, got {c}")));
        }
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::shape(
                "ImageTensor",
                format!("spatial size {h}x{w} is not a positive multiple of 32"),
            ));
        }
        Ok(Self { tensor })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn height(&self) -> usize {
        self.tensor.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims()[3]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn image_sizes_must_be_multiples_of_32() {
        let ok = Tensor::zeros((1, 3, 64, 96), DType::F32, &Device::Cpu).unwrap();
        assert!(ImageTensor::new(ok).is_ok());
        let bad = Tensor::zeros((1, 3, 48, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(ImageTensor::new(bad), Err(Error::Shape { .. })));
        let gray = Tensor::zeros((1, 1, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(ImageTensor::new(gray).is_err());
    }
}
