use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DatasetError, Sample};
use crate::seed::{rng_for, TAG_SPLIT};

pub const DEFAULT_TRAIN_RATIO: f64 = 0.7;

/// Seeded shuffle into disjoint `(train, test)` parts, `round(ratio * n)` for training.
pub fn split(samples: &[Sample], ratio: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>), DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::Invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut rng_for(seed, &[TAG_SPLIT]));
    let n_train = (ratio * samples.len() as f64).round() as usize;
    let train = idx[..n_train].iter().map(|&i| samples[i].clone()).collect();
    let test = idx[n_train..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, test))
}

/// Per-dimension min-max scaling fitted on a training split.
///
/// Observation dims pool start and goal vectors; text dims likewise. Values
/// outside the fitted range are clamped so every output lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub obs_min: Vec<f64>,
    pub obs_max: Vec<f64>,
    pub text_min: Vec<f64>,
    pub text_max: Vec<f64>,
}

fn fit_range<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for r in rows {
        for (j, v) in r.iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
        }
    }
    (lo, hi)
}

fn scale(v: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((x, l), h) in v.iter_mut().zip(lo).zip(hi) {
        let span = h - l;
        *x = if span > 0.0 { ((*x - l) / span).clamp(0.0, 1.0) } else { 0.0 };
    }
}

impl Normalizer {
    pub fn fit(train: &[Sample]) -> Result<Normalizer, DatasetError> {
        let first = train.first().ok_or(DatasetError::EmptyInput)?;
        let (obs_min, obs_max) = fit_range(train.iter().flat_map(|s| [&s.obs_start, &s.obs_goal]), first.obs_start.len());
        let (text_min, text_max) =
            fit_range(train.iter().flat_map(|s| [&s.text_start, &s.text_goal]), first.text_start.len());
        Ok(Normalizer {
            obs_min,
            obs_max,
            text_min,
            text_max,
        })
    }

    pub fn apply(&self, s: &Sample) -> Sample {
        let mut out = s.clone();
        scale(&mut out.obs_start, &self.obs_min, &self.obs_max);
        scale(&mut out.obs_goal, &self.obs_min, &self.obs_max);
        scale(&mut out.text_start, &self.text_min, &self.text_max);
        scale(&mut out.text_goal, &self.text_min, &self.text_max);
        out
    }

    pub fn apply_all(&self, samples: &[Sample]) -> Vec<Sample> {
        samples.iter().map(|s| self.apply(s)).collect()
    }
}
