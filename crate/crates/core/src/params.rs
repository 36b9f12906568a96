//! Named parameter storage with seeded initialization and checkpoint I/O.
//!
//! Every learnable tensor and every batch-norm running statistic lives in a
//! [`ParamStore`] under a dotted path such as
//! `backbone.stage1.block0.attn.q.weight`. Checkpoints are the flat
//! name-to-tensor map of the store, serialized as safetensors.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    Uniform(f64),
    Normal(f64),
    /// Normal clipped to two standard deviations.
    TruncNormal(f64),
}

impl Init {
    fn sample(self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Init::Const(v) => vec![v; n],
            Init::Uniform(bound) => (0..n).map(|_| rng.gen_range(-bound..=bound)).collect(),
            Init::Normal(std) => (0..n).map(|_| std * standard_normal(rng)).collect(),
            Init::TruncNormal(std) => (0..n)
                .map(|_| loop {
                    let z = standard_normal(rng);
                    if z.abs() <= 2.0 {
                        break std * z;
                    }
                })
                .collect(),
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one sample per call keeps the stream simple to reason about.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Debug, Clone)]
struct Entry {
    var: Var,
    trainable: bool,
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
    dtype: DType,
    device: Device,
}

/// Outcome of loading a checkpoint into a store.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Store entries under the requested prefix that the file does not provide.
    pub missing: Vec<String>,
    /// File entries under the requested prefix that the store does not have.
    pub unexpected: Vec<String>,
    /// File entries outside the requested prefix.
    pub ignored: usize,
}

impl LoadReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty()
    }
}

impl ParamStore {
    pub fn new(dtype: DType, device: Device) -> Self {
        Self {
            entries: BTreeMap::new(),
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root<'a>(&'a mut self, rng: &'a mut ChaCha8Rng) -> Scope<'a> {
        Scope {
            store: self,
            rng,
            prefix: String::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.get(name).map(|e| &e.var)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(k, e)| (k.as_str(), &e.var))
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.trainable().map(|(k, _)| k.to_string()).collect()
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn num_parameters(&self) -> usize {
        self.trainable().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn num_parameters_with_prefix(&self, prefix: &str) -> usize {
        self.trainable()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// Snapshot of every entry as plain tensors.
    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), e.var.as_tensor().clone()))
            .collect()
    }

    /// Dense `f64` export (shape, row-major values) for every entry.
    pub fn export_f64(&self) -> Result<BTreeMap<String, (Vec<usize>, Vec<f64>)>> {
        self.entries
            .iter()
            .map(|(k, e)| {
                let t = e.var.as_tensor();
                Ok((k.clone(), (t.dims().to_vec(), crate::ops::to_f64_vec(t)?)))
            })
            .collect()
    }

    /// Overwrites one entry, checking the shape.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if entry.var.dims() != value.dims() {
            return Err(Error::Checkpoint(format!(
                "{name}: expected shape {:?}, got {:?}",
                entry.var.dims(),
                value.dims()
            )));
        }
        entry.var.set(&value.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        candle_core::safetensors::save(&self.tensors(), path.as_ref())?;
        Ok(())
    }

    /// Loads every entry whose name starts with `prefix` (empty for all).
    ///
    /// Shape mismatches always fail, listing the offending names. With
    /// `strict`, missing or unexpected names under the prefix fail as well;
    /// otherwise they are only reported.
    pub fn load(&self, path: impl AsRef<Path>, prefix: &str, strict: bool) -> Result<LoadReport> {
        let path = path.as_ref();
        let file = candle_core::safetensors::load(path, &self.device)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        self.load_map(&file, prefix, strict)
    }

    pub fn load_map(&self, file: &HashMap<String, Tensor>, prefix: &str, strict: bool) -> Result<LoadReport> {
        let mut report = LoadReport::default();
        let mut mismatched = Vec::new();
        for (name, entry) in self.entries.iter().filter(|(k, _)| k.starts_with(prefix)) {
            match file.get(name) {
                None => report.missing.push(name.clone()),
                Some(t) if t.dims() != entry.var.dims() => mismatched.push(format!(
                    "{name} (model {:?}, file {:?})",
                    entry.var.dims(),
                    t.dims()
                )),
                Some(_) => {}
            }
        }
        let mut names: Vec<&String> = file.keys().collect();
        names.sort();
        for name in names {
            if !name.starts_with(prefix) {
                report.ignored += 1;
            } else if !self.entries.contains_key(name) {
                report.unexpected.push(name.clone());
            }
        }
        if !mismatched.is_empty() {
            return Err(Error::Checkpoint(format!("shape mismatch: {}", mismatched.join(", "))));
        }
        if strict && !report.is_complete() {
            return Err(Error::Checkpoint(format!(
                "missing [{}]; unexpected [{}]",
                report.missing.join(", "),
                report.unexpected.join(", ")
            )));
        }
        for (name, entry) in self.entries.iter().filter(|(k, _)| k.starts_with(prefix)) {
            if let Some(t) = file.get(name) {
                entry.var.set(&t.to_dtype(self.dtype)?)?;
                report.loaded.push(name.clone());
            }
        }
        Ok(report)
    }
}

/// A cursor into a [`ParamStore`] that creates entries under a path prefix.
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl Scope<'_> {
    pub fn sub(&mut self, name: &str) -> Scope<'_> {
        Scope {
            prefix: self.path(name),
            store: &mut *self.store,
            rng: &mut *self.rng,
        }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }

    fn create(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<Var> {
        let path = self.path(name);
        if self.store.entries.contains_key(&path) {
            return Err(Error::Config(format!("duplicate parameter {path}")));
        }
        let n = shape.iter().product();
        let values = init.sample(n, self.rng);
        let t = Tensor::from_vec(values, shape, &self.store.device)?.to_dtype(self.store.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.store.entries.insert(path, Entry { var: var.clone(), trainable });
        Ok(var)
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.create(name, shape, init, true)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.create(name, shape, init, false)
    }
}
