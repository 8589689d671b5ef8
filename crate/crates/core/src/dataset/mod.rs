//! Synthetic instructional-video corpus, observation curation, and sample I/O.
//!
//! The generator stands in for real benchmark videos: every task follows a
//! canonical chain of actions, each frame carries the embedding of the action
//! being performed, and start/goal observations are averaged over short
//! second-aligned windows around the first and last action of a horizon.

mod corpus;
mod curate;
mod manifest;
mod split;

use std::io;

use thiserror::Error;

pub use corpus::{generate_corpus, Corpus, CorpusConfig, Step, Video, CORPUS_KEYS};
pub use curate::{curate_corpus, curate_windows, slide_horizon, CurationMode, Window};
pub use manifest::{read_manifest, write_manifest, Dims, Manifest, ManifestEntry, Offsets};
pub use split::{split, Normalizer, DEFAULT_TRAIN_RATIO};

/// One curated example: task, action sequence and start/goal features.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sample {
    pub task: usize,
    pub actions: Vec<usize>,
    pub obs_start: Vec<f64>,
    pub obs_goal: Vec<f64>,
    pub text_start: Vec<f64>,
    pub text_goal: Vec<f64>,
}

impl Sample {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// VAE input for the start state: observation followed by language embedding.
    pub fn start_state(&self) -> Vec<f64> {
        [self.obs_start.as_slice(), self.text_start.as_slice()].concat()
    }

    pub fn goal_state(&self) -> Vec<f64> {
        [self.obs_goal.as_slice(), self.text_goal.as_slice()].concat()
    }
}

/// Samples plus the label-space and feature sizes they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub num_tasks: usize,
    pub num_actions: usize,
    pub obs_dim: usize,
    pub text_dim: usize,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    /// Same header, different samples.
    pub fn with_samples(&self, samples: Vec<Sample>) -> SampleSet {
        SampleSet {
            num_tasks: self.num_tasks,
            num_actions: self.num_actions,
            obs_dim: self.obs_dim,
            text_dim: self.text_dim,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("infeasible corpus config: {0}")]
    Infeasible(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("window [{start}, {end}) is empty after clamping to a {duration}-second video")]
    EmptyWindow { start: f64, end: f64, duration: usize },
    #[error("cannot split an empty sample list")]
    EmptyInput,
    #[error("manifest i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("feature file {file} holds {available} values, entry needs {needed}")]
    Truncated {
        file: String,
        needed: u64,
        available: u64,
    },
    #[error("feature file {file} has {len} bytes, not a whole number of f32 values")]
    Misaligned { file: String, len: u64 },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}
