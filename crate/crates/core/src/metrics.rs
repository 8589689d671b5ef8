//! Plan-level evaluation: success rate, mean accuracy, per-plan IoU.
//!
//! Every metric is a mean over individual plans, so results never depend on
//! how plans are batched.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{rng_for, TAG_RANDOM_PLANNER};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no plans to score")]
    Empty,
    #[error("plan lengths differ: predicted {predicted}, truth {truth}")]
    Length { predicted: usize, truth: usize },
    #[error("ground-truth boundary needs T >= 2, got {0}")]
    Horizon(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanPair {
    pub predicted: Vec<usize>,
    pub truth: Vec<usize>,
}

impl PlanPair {
    pub fn new(predicted: Vec<usize>, truth: Vec<usize>) -> Result<PlanPair, MetricsError> {
        if predicted.len() != truth.len() {
            return Err(MetricsError::Length {
                predicted: predicted.len(),
                truth: truth.len(),
            });
        }
        Ok(PlanPair { predicted, truth })
    }

    pub fn is_success(&self) -> bool {
        self.predicted == self.truth
    }

    /// Fraction of positions whose actions agree.
    pub fn positional_accuracy(&self) -> f64 {
        let hits = self.predicted.iter().zip(&self.truth).filter(|(p, t)| p == t).count();
        hits as f64 / self.truth.len() as f64
    }

    /// Multiset overlap divided by `T`.
    pub fn set_accuracy(&self) -> f64 {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for a in &self.truth {
            *counts.entry(*a).or_default() += 1;
        }
        let mut overlap = 0;
        for a in &self.predicted {
            if let Some(c) = counts.get_mut(a).filter(|c| **c > 0) {
                *c -= 1;
                overlap += 1;
            }
        }
        overlap as f64 / self.truth.len() as f64
    }

    /// `|set(pred) ∩ set(truth)| / |set(pred) ∪ set(truth)|`.
    pub fn iou(&self) -> f64 {
        let p: BTreeSet<_> = self.predicted.iter().collect();
        let t: BTreeSet<_> = self.truth.iter().collect();
        p.intersection(&t).count() as f64 / p.union(&t).count() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaccMode {
    #[default]
    Positional,
    Set,
}

impl fmt::Display for MaccMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaccMode::Positional => "positional",
            MaccMode::Set => "set",
        })
    }
}

impl FromStr for MaccMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positional" => Ok(MaccMode::Positional),
            "set" => Ok(MaccMode::Set),
            other => Err(format!("unknown mAcc mode `{other}` (expected positional or set)")),
        }
    }
}

fn mean_of(pairs: &[PlanPair], f: impl Fn(&PlanPair) -> f64) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(pairs.iter().map(f).sum::<f64>() / pairs.len() as f64)
}

pub fn success_rate(pairs: &[PlanPair]) -> Result<f64, MetricsError> {
    mean_of(pairs, |p| if p.is_success() { 1.0 } else { 0.0 })
}

pub fn mean_accuracy(pairs: &[PlanPair], mode: MaccMode) -> Result<f64, MetricsError> {
    match mode {
        MaccMode::Positional => mean_of(pairs, PlanPair::positional_accuracy),
        MaccMode::Set => mean_of(pairs, PlanPair::set_accuracy),
    }
}

pub fn msiou(pairs: &[PlanPair]) -> Result<f64, MetricsError> {
    mean_of(pairs, PlanPair::iou)
}

/// Replaces the first and last predicted actions with the true ones.
pub fn apply_gt_boundary(pair: &PlanPair) -> Result<PlanPair, MetricsError> {
    let t = pair.truth.len();
    if t < 2 {
        return Err(MetricsError::Horizon(t));
    }
    let mut predicted = pair.predicted.clone();
    predicted[0] = pair.truth[0];
    predicted[t - 1] = pair.truth[t - 1];
    Ok(PlanPair {
        predicted,
        truth: pair.truth.clone(),
    })
}

/// Uniformly random plans of length `horizon` over `num_actions` labels, one per truth.
pub fn random_planner(truths: &[Vec<usize>], num_actions: usize, seed: u64) -> Vec<PlanPair> {
    let mut rng = rng_for(seed, &[TAG_RANDOM_PLANNER]);
    truths
        .iter()
        .map(|t| PlanPair {
            predicted: (0..t.len()).map(|_| rng.random_range(0..num_actions)).collect(),
            truth: t.clone(),
        })
        .collect()
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub dataset: String,
    pub curation: String,
    pub horizon: usize,
    pub count: usize,
    pub successes: usize,
    pub sr: f64,
    /// The mAcc column, in `macc_mode`.
    pub macc: f64,
    pub macc_mode: MaccMode,
    pub macc_positional: f64,
    pub macc_set: f64,
    pub msiou: f64,
    pub gt_boundary: bool,
    pub fingerprint: String,
}

pub const CSV_COLUMNS: [&str; 12] = [
    "dataset",
    "curation",
    "T",
    "SR",
    "mAcc",
    "mSIoU",
    "mAcc_positional",
    "mAcc_set",
    "n",
    "successes",
    "gt_boundary",
    "fingerprint",
];

impl PlanReport {
    pub fn from_pairs(
        pairs: &[PlanPair],
        macc_mode: MaccMode,
        dataset: &str,
        curation: &str,
        gt_boundary: bool,
        fingerprint: &str,
    ) -> Result<PlanReport, MetricsError> {
        let first = pairs.first().ok_or(MetricsError::Empty)?;
        let macc_positional = mean_accuracy(pairs, MaccMode::Positional)?;
        let macc_set = mean_accuracy(pairs, MaccMode::Set)?;
        Ok(PlanReport {
            dataset: dataset.into(),
            curation: curation.into(),
            horizon: first.truth.len(),
            count: pairs.len(),
            successes: pairs.iter().filter(|p| p.is_success()).count(),
            sr: success_rate(pairs)?,
            macc: match macc_mode {
                MaccMode::Positional => macc_positional,
                MaccMode::Set => macc_set,
            },
            macc_mode,
            macc_positional,
            macc_set,
            msiou: msiou(pairs)?,
            gt_boundary,
            fingerprint: fingerprint.into(),
        })
    }

    fn csv_cells(&self) -> [String; 12] {
        [
            self.dataset.clone(),
            self.curation.clone(),
            self.horizon.to_string(),
            format!("{:.4}", self.sr),
            format!("{:.4}", self.macc),
            format!("{:.4}", self.msiou),
            format!("{:.4}", self.macc_positional),
            format!("{:.4}", self.macc_set),
            self.count.to_string(),
            self.successes.to_string(),
            self.gt_boundary.to_string(),
            self.fingerprint.clone(),
        ]
    }
}

/// Comma-separated table with columns padded to a common width.
pub fn aligned_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let last = cells.len() - 1;
        let mut s: String = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == last { c.to_string() } else { format!("{c:<w$}, ", w = widths[i]) })
            .collect();
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

pub fn reports_to_csv(reports: &[PlanReport]) -> String {
    let rows: Vec<Vec<String>> = reports.iter().map(|r| r.csv_cells().to_vec()).collect();
    aligned_csv(&CSV_COLUMNS, &rows)
}
