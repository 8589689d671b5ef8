//! Task classifier over the concatenated start and goal observations.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::autodiff::nn::Linear;
use crate::autodiff::{cross_entropy, no_grad, AdamWConfig, Checkpoint, CheckpointError, ParamStore, Tensor, TensorError};
use crate::dataset::Sample;
use crate::seed::{rng_for, TAG_INIT_CLASSIFIER};

pub const CLASSIFIER_HIDDEN: usize = 256;
const ARCH_ENTRY: &str = "classifier.arch";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("expected observations of width {expected}, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid architecture: {0}")]
    Arch(String),
}

#[derive(Debug)]
pub struct TaskClassifier {
    pub store: ParamStore,
    obs_dim: usize,
    num_tasks: usize,
    hidden: Linear,
    out: Linear,
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl TaskClassifier {
    pub fn new(obs_dim: usize, num_tasks: usize, seed: u64) -> Result<TaskClassifier, ClassifierError> {
        if obs_dim == 0 || num_tasks == 0 {
            return Err(ClassifierError::Arch(format!("obs_dim {obs_dim}, num_tasks {num_tasks}")));
        }
        let mut rng = rng_for(seed, &[TAG_INIT_CLASSIFIER]);
        let mut store = ParamStore::new();
        let hidden = Linear::new(&mut store, "classifier.hidden", 2 * obs_dim, CLASSIFIER_HIDDEN, &mut rng)?;
        let out = Linear::new(&mut store, "classifier.out", CLASSIFIER_HIDDEN, num_tasks, &mut rng)?;
        Ok(TaskClassifier {
            store,
            obs_dim,
            num_tasks,
            hidden,
            out,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    fn inputs(&self, pairs: &[(&[f64], &[f64])]) -> Result<Tensor, ClassifierError> {
        if pairs.is_empty() {
            return Err(ClassifierError::EmptyBatch);
        }
        let mut flat = Vec::with_capacity(pairs.len() * 2 * self.obs_dim);
        for (s, g) in pairs {
            for v in [s, g] {
                if v.len() != self.obs_dim {
                    return Err(ClassifierError::InputDim {
                        expected: self.obs_dim,
                        got: v.len(),
                    });
                }
                flat.extend_from_slice(v);
            }
        }
        Ok(Tensor::new(flat, &[pairs.len(), 2 * self.obs_dim])?)
    }

    /// `[B, C]` logits.
    pub fn logits(&self, pairs: &[(&[f64], &[f64])]) -> Result<Tensor, ClassifierError> {
        let h = self.hidden.forward(&self.inputs(pairs)?)?.relu()?;
        Ok(self.out.forward(&h)?)
    }

    /// Predicted label and class probabilities.
    pub fn predict_task(&self, obs_start: &[f64], obs_goal: &[f64]) -> Result<(usize, Vec<f64>), ClassifierError> {
        let _guard = no_grad();
        let probs = self.logits(&[(obs_start, obs_goal)])?.softmax_lastdim()?.to_vec();
        Ok((argmax(&probs), probs))
    }

    pub fn predict_samples(&self, samples: &[Sample]) -> Result<Vec<usize>, ClassifierError> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let _guard = no_grad();
        let pairs: Vec<_> = samples.iter().map(|s| (s.obs_start.as_slice(), s.obs_goal.as_slice())).collect();
        let logits = self.logits(&pairs)?.to_vec();
        Ok(logits.chunks(self.num_tasks).map(argmax).collect())
    }

    /// One AdamW step on cross-entropy; returns the batch loss.
    pub fn train_step(&mut self, batch: &[&Sample], opt: &AdamWConfig) -> Result<f64, ClassifierError> {
        let labels: Vec<usize> = batch.iter().map(|s| s.task).collect();
        if let Some(&label) = labels.iter().find(|l| **l >= self.num_tasks) {
            return Err(ClassifierError::Label {
                label,
                classes: self.num_tasks,
            });
        }
        let pairs: Vec<_> = batch.iter().map(|s| (s.obs_start.as_slice(), s.obs_goal.as_slice())).collect();
        self.store.zero_grads();
        let loss = cross_entropy(&self.logits(&pairs)?, &labels)?;
        loss.backward()?;
        self.store.adamw_step(opt)?;
        Ok(loss.item())
    }

    /// Shuffled minibatch pass; returns the sample-weighted mean loss.
    pub fn train_epoch(
        &mut self,
        data: &[Sample],
        batch_size: usize,
        opt: &AdamWConfig,
        rng: &mut impl Rng,
    ) -> Result<f64, ClassifierError> {
        if data.is_empty() || batch_size == 0 {
            return Err(ClassifierError::EmptyBatch);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            total += self.train_step(&batch, opt)? * chunk.len() as f64;
        }
        Ok(total / data.len() as f64)
    }

    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64, ClassifierError> {
        if samples.is_empty() {
            return Err(ClassifierError::EmptyBatch);
        }
        let pred = self.predict_samples(samples)?;
        let hits = pred.iter().zip(samples).filter(|(p, s)| **p == s.task).count();
        Ok(hits as f64 / samples.len() as f64)
    }

    /// Parameters plus `classifier.arch = [obs_dim, hidden, num_tasks]`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.store.to_checkpoint();
        ckpt.push(
            ARCH_ENTRY,
            vec![3],
            vec![self.obs_dim as f64, CLASSIFIER_HIDDEN as f64, self.num_tasks as f64],
        );
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<TaskClassifier, ClassifierError> {
        let e = ckpt
            .get(ARCH_ENTRY)
            .ok_or_else(|| CheckpointError::MissingEntry(ARCH_ENTRY.into()))?;
        let m = &e.data;
        if m.len() != 3 || m[1] != CLASSIFIER_HIDDEN as f64 {
            return Err(CheckpointError::MetaMismatch {
                name: ARCH_ENTRY.into(),
                detail: format!("{m:?}"),
            }
            .into());
        }
        let c = TaskClassifier::new(m[0] as usize, m[2] as usize, 0)?;
        c.store.load_checkpoint(ckpt)?;
        Ok(c)
    }
}
