//! AdamW with decoupled weight decay and global gradient-norm clipping.

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

struct Slot {
    var: Var,
    m: Tensor,
    v: Tensor,
}

pub struct AdamW {
    cfg: AdamWConfig,
    slots: Vec<Slot>,
    step: usize,
}

impl AdamW {
    pub fn new(vars: Vec<Var>, cfg: AdamWConfig) -> Result<Self> {
        let slots = vars
            .into_iter()
            .map(|var| {
                let m = var.as_tensor().zeros_like()?;
                let v = m.clone();
                Ok(Slot { var, m, v })
            })
            .collect::<Result<_>>()?;
        Ok(Self { cfg, slots, step: 0 })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.slots.iter().map(|s| &s.var)
    }

    /// One update. `grads[i]` belongs to the i-th variable; `None` leaves
    /// the parameter and its moments untouched.
    pub fn step(&mut self, grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        assert_eq!(grads.len(), self.slots.len(), "one gradient slot per variable");
        self.step += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (slot, g) in self.slots.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            let g = g.detach();
            slot.m = ((&slot.m * beta1)? + (&g * (1.0 - beta1))?)?.detach();
            slot.v = ((&slot.v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?.detach();
            let denom = ((&slot.v / bc2)?.sqrt()? + eps)?;
            let update = ((&slot.m / bc1)? / denom)?;
            let p = slot.var.as_tensor();
            let decayed = (p * (1.0 - lr * weight_decay))?;
            slot.var.set(&(decayed - (update * lr)?)?)?;
        }
        Ok(())
    }
}

/// Gradient norms before and after clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipOutcome {
    pub norm: f64,
    pub clipped_norm: f64,
}

fn sum_sq(grads: &[Option<Tensor>]) -> Result<f64> {
    let mut total = 0.0;
    for g in grads.iter().flatten() {
        total += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
    }
    Ok(total)
}

/// Collects the gradient of each variable (`None` when it did not take part).
/// Gradients are detached: some still reference the forward graph, and
/// keeping them in optimizer state would pin every step's activations.
pub fn gather<'a>(grads: &GradStore, vars: impl IntoIterator<Item = &'a Var>) -> Vec<Option<Tensor>> {
    vars.into_iter().map(|v| grads.get(v.as_tensor()).map(Tensor::detach)).collect()
}

/// Rescales all gradients together so their joint L2 norm is at most
/// `max_norm`, using the same `max / (norm + 1e-6)` factor as the usual
/// framework routine. The reported clipped norm is measured after scaling.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> Result<ClipOutcome> {
    let norm = sum_sq(grads)?.sqrt();
    let coef = max_norm / (norm + 1e-6);
    if coef < 1.0 {
        for g in grads.iter_mut().flatten() {
            *g = (&*g * coef)?;
        }
        let clipped_norm = sum_sq(grads)?.sqrt();
        Ok(ClipOutcome { norm, clipped_norm })
    } else {
        Ok(ClipOutcome { norm, clipped_norm: norm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    #[test]
    fn clipping_bounds_joint_norm() {
        let mut g = vec![Some(t(&[3.0, 0.0])), None, Some(t(&[4.0]))];
        let out = clip_global_norm(&mut g, 0.5).unwrap();
        assert!((out.norm - 5.0).abs() < 1e-12);
        assert!(out.clipped_norm <= 0.5 + 1e-6);
        let a = g[0].as_ref().unwrap().to_vec1::<f64>().unwrap();
        // direction preserved
        assert!((a[0] / g[2].as_ref().unwrap().to_vec1::<f64>().unwrap()[0] - 0.75).abs() < 1e-12);
        let mut small = vec![Some(t(&[0.1]))];
        let out = clip_global_norm(&mut small, 0.5).unwrap();
        assert_eq!(out.norm, out.clipped_norm);
        assert_eq!(small[0].as_ref().unwrap().to_vec1::<f64>().unwrap(), vec![0.1]);
    }

    /// Two steps checked against the closed-form recurrences.
    #[test]
    fn matches_hand_computed_updates() {
        let var = Var::from_tensor(&t(&[1.0, -2.0])).unwrap();
        let cfg = AdamWConfig { weight_decay: 0.1, ..Default::default() };
        let mut opt = AdamW::new(vec![var.clone()], cfg).unwrap();
        let (lr, g1, g2) = (0.01, [0.5, -1.0], [0.2, 0.3]);
        opt.step(&[Some(t(&g1))], lr).unwrap();
        opt.step(&[Some(t(&g2))], lr).unwrap();
        let got = var.as_tensor().to_vec1::<f64>().unwrap();
        for (i, p0) in [1.0f64, -2.0].into_iter().enumerate() {
            let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
            for (k, g) in [g1[i], g2[i]].into_iter().enumerate() {
                let step = (k + 1) as i32;
                p *= 1.0 - lr * 0.1;
                m = 0.9 * m + 0.1 * g;
                v = 0.999 * v + 0.001 * g * g;
                let mh = m / (1.0 - 0.9f64.powi(step));
                let vh = v / (1.0 - 0.999f64.powi(step));
                p -= lr * mh / (vh.sqrt() + 1e-8);
            }
            assert!((got[i] - p).abs() < 1e-12, "{i}: {} vs {p}", got[i]);
        }
        assert_eq!(opt.steps_taken(), 2);
    }

    #[test]
    fn missing_gradient_leaves_parameter() {
        let var = Var::from_tensor(&t(&[1.0])).unwrap();
        let mut opt = AdamW::new(vec![var.clone()], AdamWConfig::default()).unwrap();
        opt.step(&[None], 0.1).unwrap();
        assert_eq!(var.as_tensor().to_vec1::<f64>().unwrap(), vec![1.0]);
    }
}
