use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::layers::{ConvUnit, Mode};
use crate::ops::resize_bilinear;
use crate::params::Scope;

/// Cascaded fusion of the three reduced high-level maps into T1 (stride 8).
///
/// Part one: `X34 = F3(cat(F1(up(X4')) * X3', F2(up(X4'))))` at stride 16.
/// Part two: `T1 = F8(F7(cat(F4(up(X4')) * F5(up(X3')) * X2', F6(up(X34)))))`
/// with every upsample going straight to the X2' grid.
#[derive(Debug, Clone)]
pub struct Cfm {
    units: [ConvUnit; 8],
    channel: usize,
}

fn check(context: &str, maps: &[&FeatureMap], channel: usize) -> Result<()> {
    for fm in maps {
        if fm.channels() != channel {
            return Err(Error::shape(
                context,
                format!("expected {channel} channels, got {}", fm.channels()),
            ));
        }
    }
    Ok(())
}

fn upsample_to(x: &FeatureMap, target: &FeatureMap) -> Result<Tensor> {
    resize_bilinear(&x.tensor, target.height(), target.width())
}

impl Cfm {
    pub fn new(scope: &mut Scope, channel: usize) -> Result<Self> {
        let c = channel;
        let spec = [(c, c), (c, c), (2 * c, c), (c, c), (c, c), (c, c), (2 * c, 2 * c), (2 * c, c)];
        let mut units = Vec::with_capacity(8);
        for (i, (c_in, c_out)) in spec.into_iter().enumerate() {
            units.push(ConvUnit::new(&mut scope.sub(&format!("f{}", i + 1)), c_in, c_out, 3, 1)?);
        }
        Ok(Self {
            units: units.try_into().expect("eight units"),
            channel,
        })
    }

    fn unit(&self, i: usize) -> &ConvUnit {
        &self.units[i - 1]
    }

    pub fn part1(&self, x3: &FeatureMap, x4: &FeatureMap, mode: &mut Mode) -> Result<FeatureMap> {
        check("cfm part one", &[x3, x4], self.channel)?;
        let up4 = upsample_to(x4, x3)?;
        let gated = (self.unit(1).forward(&up4, mode)? * &x3.tensor)?;
        let smooth = self.unit(2).forward(&up4, mode)?;
        let fused = self.unit(3).forward(&Tensor::cat(&[gated, smooth], 1)?, mode)?;
        FeatureMap::new(fused, x3.stride)
    }

    pub fn part2(
        &self,
        x2: &FeatureMap,
        x3: &FeatureMap,
        x4: &FeatureMap,
        x34: &FeatureMap,
        mode: &mut Mode,
    ) -> Result<FeatureMap> {
        check("cfm part two", &[x2, x3, x4, x34], self.channel)?;
        let a = self.unit(4).forward(&upsample_to(x4, x2)?, mode)?;
        let b = self.unit(5).forward(&upsample_to(x3, x2)?, mode)?;
        let product = ((a * b)? * &x2.tensor)?;
        let context = self.unit(6).forward(&upsample_to(x34, x2)?, mode)?;
        let cat = Tensor::cat(&[product, context], 1)?;
        let t1 = self.unit(8).forward(&self.unit(7).forward(&cat, mode)?, mode)?;
        FeatureMap::new(t1, x2.stride)
    }

    pub fn forward(&self, x2: &FeatureMap, x3: &FeatureMap, x4: &FeatureMap, mode: &mut Mode) -> Result<FeatureMap> {
        let x34 = self.part1(x3, x4, mode)?;
        self.part2(x2, x3, x4, &x34, mode)
    }
}
