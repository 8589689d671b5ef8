use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::checkpoint::{Checkpoint, CheckpointEntry, CheckpointError};
use super::{Tensor, TensorError};

/// Decoupled-weight-decay Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.0,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named parameters in insertion order, plus the optimizer state that goes with them.
#[derive(Debug, Default)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
    moments: IndexMap<String, Moments>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter and returns a handle sharing its storage.
    pub fn insert(&mut self, name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> Result<Tensor, TensorError> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let t = Tensor::param(data, shape)?;
        self.params.insert(name, t.clone());
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&self) {
        self.params.values().for_each(Tensor::zero_grad);
    }

    pub fn set_requires_grad(&self, on: bool) {
        self.params.values().for_each(|t| t.set_requires_grad(on));
    }

    /// Excludes parameters whose name starts with `prefix` from training.
    pub fn freeze_prefix(&self, prefix: &str) {
        for (name, t) in &self.params {
            if name.starts_with(prefix) {
                t.set_requires_grad(false);
            }
        }
    }

    /// One AdamW update over every parameter that requires a gradient.
    ///
    /// Gradients are left in place; callers zero them before the next backward.
    pub fn adamw_step(&mut self, cfg: &AdamWConfig) -> Result<(), TensorError> {
        if !(cfg.lr >= 0.0) || !cfg.lr.is_finite() {
            return Err(TensorError::Invalid {
                op: "adamw_step",
                msg: format!("learning rate {} must be finite and non-negative", cfg.lr),
            });
        }
        let trainable: Vec<(&String, &Tensor)> = self.params.iter().filter(|(_, t)| t.requires_grad()).collect();
        let mut grads = Vec::with_capacity(trainable.len());
        for (name, t) in &trainable {
            grads.push(t.grad().ok_or_else(|| TensorError::MissingGrad((*name).clone()))?);
        }
        self.step += 1;
        let (b1, b2) = cfg.betas;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for ((name, t), g) in trainable.into_iter().zip(grads) {
            let mom = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            t.update_data(|p| {
                for i in 0..p.len() {
                    p[i] -= cfg.lr * cfg.weight_decay * p[i];
                    mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g[i];
                    mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = mom.m[i] / bc1;
                    let v_hat = mom.v[i] / bc2;
                    p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            });
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and raw little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.params {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data().iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            entries: self
                .params
                .iter()
                .map(|(name, t)| CheckpointEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.to_vec(),
                })
                .collect(),
        }
    }

    /// Copies values for every registered parameter out of `ckpt`, checking shapes.
    /// Extra checkpoint entries are ignored.
    pub fn load_checkpoint(&self, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
        for (name, t) in &self.params {
            let entry = ckpt.get(name).ok_or_else(|| CheckpointError::MissingEntry(name.clone()))?;
            if entry.shape != t.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    expected: t.shape().to_vec(),
                    found: entry.shape.clone(),
                });
            }
            t.update_data(|d| d.copy_from_slice(&entry.data));
        }
        Ok(())
    }
}
