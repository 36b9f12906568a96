//! Finite-difference gradient checks for the differentiable modules.
//!
//! Each check builds a small `f64` instance of a module, reduces its output to
//! a scalar, and compares autograd against central differences at a handful
//! of sampled parameter entries.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{Backbone, BackboneConfig};
use crate::decoder::{Cfm, Cim, DecoderConfig, NodeReasoning, Sam};
use crate::error::{Error, Result};
use crate::feature::{FeatureMap, ImageTensor};
use crate::layers::Mode;
use crate::loss::{total_loss, LossConfig};
use crate::model::PredictionTriple;
use crate::ops::to_f64_vec;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckConfig {
    /// Scalar entries compared per check.
    pub samples: usize,
    /// Central-difference step; `None` uses the module's default.
    pub step: Option<f64>,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples: 10,
            step: None,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-7)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub module: String,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub entries: Vec<EntryCheck>,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} (max rel err {:.3e}, tol {:.0e}, {} entries)",
            self.module,
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.tolerance,
            self.entries.len()
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "  {:<48} [{:>5}] analytic {:>+.6e} numeric {:>+.6e} rel {:.2e}",
                e.name, e.index, e.analytic, e.numeric, e.rel_error
            )?;
        }
        Ok(())
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn with_entry(var: &Var, index: usize, value: f64) -> Result<()> {
    let mut data = to_f64_vec(var.as_tensor())?;
    data[index] = value;
    let t = Tensor::from_vec(data, var.shape(), var.device())?.to_dtype(var.dtype())?;
    var.set(&t)?;
    Ok(())
}

/// Compares autograd with central differences for `objective` at
/// `cfg.samples` entries drawn from `vars`. A tensor is picked uniformly
/// first, then an entry inside it, so small tensors like biases get covered.
pub fn check_gradients<F>(module: &str, vars: &[(String, Var)], objective: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
{
    if vars.is_empty() {
        return Err(Error::Config(format!("{module}: nothing to check")));
    }
    let loss = objective()?;
    let grads = loss.backward()?;
    let step = cfg.step.unwrap_or(1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let (name, var) = &vars[rng.gen_range(0..vars.len())];
        let index = rng.gen_range(0..var.elem_count());
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => to_f64_vec(g)?[index],
            None => 0.0,
        };
        let original = to_f64_vec(var.as_tensor())?[index];
        with_entry(var, index, original + step)?;
        let plus = scalar(&objective()?)?;
        with_entry(var, index, original - step)?;
        let minus = scalar(&objective()?)?;
        with_entry(var, index, original)?;
        let numeric = (plus - minus) / (2.0 * step);
        entries.push(EntryCheck {
            name: name.clone(),
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        module: module.to_string(),
        tolerance: cfg.tolerance,
        max_rel_error,
        passed: max_rel_error <= cfg.tolerance,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    Backbone,
    Cfm,
    Cim,
    Sam,
    Loss,
}

impl GradTarget {
    pub const ALL: [GradTarget; 5] = [
        GradTarget::Backbone,
        GradTarget::Cfm,
        GradTarget::Cim,
        GradTarget::Sam,
        GradTarget::Loss,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            GradTarget::Backbone => "backbone",
            GradTarget::Cfm => "cfm",
            GradTarget::Cim => "cim",
            GradTarget::Sam => "sam",
            GradTarget::Loss => "loss",
        }
    }

    /// Step balancing roundoff against crossing ReLU/max kinks.
    pub fn default_step(self) -> f64 {
        match self {
            GradTarget::Backbone => 1e-5,
            GradTarget::Cfm | GradTarget::Cim => 1e-6,
            GradTarget::Sam => 1e-5,
            GradTarget::Loss => 1e-4,
        }
    }
}

impl fmt::Display for GradTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for GradTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradTarget::ALL
            .into_iter()
            .find(|t| t.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown module '{s}' (expected backbone, cfm, cim, sam or loss)")))
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Result<Tensor> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?)
}

fn random_var(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Result<Var> {
    Ok(Var::from_tensor(&random_tensor(rng, shape, scale)?)?)
}

/// `sum(x * r)` for a fixed random `r`.
fn projection(rng: &mut ChaCha8Rng, x: &Tensor) -> Result<Tensor> {
    random_tensor(rng, x.dims(), 1.0)
}

fn project(x: &Tensor, r: &Tensor) -> Result<Tensor> {
    Ok((x * r)?.sum_all()?)
}

fn store_vars(store: &ParamStore) -> Vec<(String, Var)> {
    store.trainable().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn build<T>(seed: u64, f: impl FnOnce(&mut crate::params::Scope) -> Result<T>) -> Result<(ParamStore, T)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new(DType::F64, Device::Cpu);
    let module = f(&mut store.root(&mut rng))?;
    Ok((store, module))
}

/// Runs the check for one module on its small `f64` test instance.
pub fn run_gradcheck(target: GradTarget, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let name = target.tag();
    let cfg = &GradCheckConfig {
        step: Some(cfg.step.unwrap_or(target.default_step())),
        ..*cfg
    };
    match target {
        GradTarget::Backbone => {
            let bcfg = BackboneConfig::desk();
            let (store, backbone) = build(cfg.seed, |s| Backbone::new(&mut s.sub("backbone"), &bcfg))?;
            // With unit norm weights the channel sum after the last norm is
            // constant per token and every upstream gradient vanishes.
            for (k, v) in store.trainable().filter(|(k, _)| k.contains("norm")) {
                let jitter = random_tensor(&mut rng, v.dims(), 0.5)?;
                let value = if k.ends_with("weight") { (v.as_tensor() + jitter)? } else { jitter };
                v.set(&value)?;
            }
            let img = random_tensor(&mut rng, &[1, 3, 32, 32], 1.0)?;
            let image = ImageTensor::new(img)?;
            check_gradients(
                name,
                &store_vars(&store),
                || Ok(backbone.forward(&image, &mut Mode::Eval)?.x4.tensor.sum_all()?),
                cfg,
            )
        }
        GradTarget::Cfm => {
            let c = 8;
            let (store, cfm) = build(cfg.seed, |s| Cfm::new(&mut s.sub("cfm"), c))?;
            let f2 = FeatureMap::new(random_tensor(&mut rng, &[1, c, 8, 8], 1.0)?, 8)?;
            let f3 = FeatureMap::new(random_tensor(&mut rng, &[1, c, 4, 4], 1.0)?, 16)?;
            let f4 = FeatureMap::new(random_tensor(&mut rng, &[1, c, 2, 2], 1.0)?, 32)?;
            let r = projection(&mut rng, &cfm.forward(&f2, &f3, &f4, &mut Mode::Eval)?.tensor)?;
            check_gradients(name, &store_vars(&store), || project(&cfm.forward(&f2, &f3, &f4, &mut Mode::Eval)?.tensor, &r), cfg)
        }
        GradTarget::Cim => {
            let c = 16;
            let (store, cim) = build(cfg.seed, |s| Cim::new(&mut s.sub("cim"), c, 4))?;
            let f1 = FeatureMap::new(random_tensor(&mut rng, &[1, c, 8, 8], 1.0)?, 4)?;
            let r = projection(&mut rng, &cim.forward(&f1)?.tensor)?;
            check_gradients(name, &store_vars(&store), || project(&cim.forward(&f1)?.tensor, &r), cfg)
        }
        GradTarget::Sam => {
            let dcfg = DecoderConfig::desk();
            let t2_channels = 16;
            let (store, sam) = build(cfg.seed, |s| Sam::new(&mut s.sub("sam"), t2_channels, &dcfg, NodeReasoning::Gcn))?;
            let f1 = FeatureMap::new(random_tensor(&mut rng, &[1, dcfg.channel, 8, 8], 1.0)?, 8)?;
            let f2 = FeatureMap::new(random_tensor(&mut rng, &[1, t2_channels, 16, 16], 1.0)?, 4)?;
            // Z - T1 drops a parameter-free term, which keeps the differences
            // well above roundoff for the small Wg gradients.
            let residual = || -> Result<Tensor> { Ok((sam.forward(&f1, &f2, &mut Mode::Eval)?.tensor - &f1.tensor)?) };
            let r = projection(&mut rng, &residual()?)?;
            check_gradients(name, &store_vars(&store), || project(&residual()?, &r), cfg)
        }
        GradTarget::Loss => {
            let shape = [2, 1, 8, 8];
            let p1 = random_var(&mut rng, &shape, 3.0)?;
            let p2 = random_var(&mut rng, &shape, 3.0)?;
            let mask: Vec<f64> = (0..shape.iter().product::<usize>())
                .map(|i| {
                    let (y, x) = ((i / 8) % 8, i % 8);
                    let (cy, cx) = if i < 64 { (3.0, 3.5) } else { (4.5, 4.0) };
                    let d: f64 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    if d < 6.0 { 1.0 } else { 0.0 }
                })
                .collect();
            let mask = Tensor::from_vec(mask, &shape, &Device::Cpu)?;
            let lcfg = LossConfig::default();
            let vars = vec![("logits.p1".to_string(), p1.clone()), ("logits.p2".to_string(), p2.clone())];
            check_gradients(
                name,
                &vars,
                || {
                    let pred = PredictionTriple {
                        p1: p1.as_tensor().clone(),
                        p2: p2.as_tensor().clone(),
                        p_final: (p1.as_tensor() + p2.as_tensor())?,
                    };
                    Ok(total_loss(&pred, &mask, &lcfg)?.total)
                },
                cfg,
            )
        }
    }
}
