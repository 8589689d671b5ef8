use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::kv::{KvError, KvMap};
use crate::seed::{rng_for, TAG_ACTION_TABLE, TAG_CHAINS, TAG_LANGUAGE_TABLE, TAG_VIDEO};

/// Chain construction restarts before giving up on a config.
const MAX_CHAIN_ATTEMPTS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub num_tasks: usize,
    pub num_actions: usize,
    pub obs_dim: usize,
    pub text_dim: usize,
    pub videos_per_task: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub chain_len_min: usize,
    pub chain_len_max: usize,
    /// Largest horizon for which (first, last) action pairs must identify task and middle.
    pub max_horizon: usize,
    /// Per-video probability of swapping one interior step for an off-chain action.
    pub branch_prob: f64,
}

impl Default for CorpusConfig {
    /// NIV-scale: 5 tasks, 30 videos each.
    fn default() -> Self {
        Self {
            num_tasks: 5,
            num_actions: 12,
            obs_dim: 16,
            text_dim: 16,
            videos_per_task: 30,
            noise_sd: 0.02,
            seed: 0,
            chain_len_min: 6,
            chain_len_max: 10,
            max_horizon: 6,
            branch_prob: 0.0,
        }
    }
}

pub const CORPUS_KEYS: &[&str] = &[
    "num_tasks",
    "num_actions",
    "obs_dim",
    "text_dim",
    "videos_per_task",
    "noise_sd",
    "seed",
    "chain_len_min",
    "chain_len_max",
    "max_horizon",
    "branch_prob",
];

impl CorpusConfig {
    /// Reads keys under `prefix` (e.g. `"dataset."`, or `""` for a bare generator file).
    pub fn apply_kv(&mut self, kv: &KvMap, prefix: &str) -> Result<(), KvError> {
        let k = |name: &str| format!("{prefix}{name}");
        kv.read_into(&k("num_tasks"), &mut self.num_tasks)?;
        kv.read_into(&k("num_actions"), &mut self.num_actions)?;
        kv.read_into(&k("obs_dim"), &mut self.obs_dim)?;
        kv.read_into(&k("text_dim"), &mut self.text_dim)?;
        kv.read_into(&k("videos_per_task"), &mut self.videos_per_task)?;
        kv.read_into(&k("noise_sd"), &mut self.noise_sd)?;
        kv.read_into(&k("seed"), &mut self.seed)?;
        kv.read_into(&k("chain_len_min"), &mut self.chain_len_min)?;
        kv.read_into(&k("chain_len_max"), &mut self.chain_len_max)?;
        kv.read_into(&k("max_horizon"), &mut self.max_horizon)?;
        kv.read_into(&k("branch_prob"), &mut self.branch_prob)?;
        Ok(())
    }

    pub fn to_kv(&self, prefix: &str, kv: &mut KvMap) {
        kv.set(format!("{prefix}num_tasks"), self.num_tasks);
        kv.set(format!("{prefix}num_actions"), self.num_actions);
        kv.set(format!("{prefix}obs_dim"), self.obs_dim);
        kv.set(format!("{prefix}text_dim"), self.text_dim);
        kv.set(format!("{prefix}videos_per_task"), self.videos_per_task);
        kv.set(format!("{prefix}noise_sd"), self.noise_sd);
        kv.set(format!("{prefix}seed"), self.seed);
        kv.set(format!("{prefix}chain_len_min"), self.chain_len_min);
        kv.set(format!("{prefix}chain_len_max"), self.chain_len_max);
        kv.set(format!("{prefix}max_horizon"), self.max_horizon);
        kv.set(format!("{prefix}branch_prob"), self.branch_prob);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: usize,
    pub start: f64,
    pub end: f64,
}

/// A video sampled at one frame per second; frame `t` covers `[t, t + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Video {
    pub task: usize,
    pub steps: Vec<Step>,
    pub frames: Vec<Vec<f64>>,
}

impl Video {
    pub fn duration(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub config: CorpusConfig,
    /// Canonical action chain per task.
    pub chains: Vec<Vec<usize>>,
    /// `num_actions x obs_dim` visual signature of each action.
    pub action_table: Vec<Vec<f64>>,
    /// `num_actions x text_dim` language embedding of each action's description.
    pub language_table: Vec<Vec<f64>>,
    pub videos: Vec<Video>,
}

impl Corpus {
    pub fn num_tasks(&self) -> usize {
        self.config.num_tasks
    }

    pub fn num_actions(&self) -> usize {
        self.config.num_actions
    }
}

fn table(seed: u64, tag: u64, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|r| {
            let mut rng = rng_for(seed, &[tag, r as u64]);
            (0..cols).map(|_| rng.random_range(0.0..1.0)).collect()
        })
        .collect()
}

/// Builds one chain per task such that, for every horizon `2..=max_horizon`,
/// a (first, last) action pair occurs at most once across all chains.
///
/// For horizons of 3 and up, the first action together with the unordered
/// pair of the last two actions is also unique. A goal window that straddles
/// a one-second gap averages the last two actions, so swapping them would
/// otherwise yield identical observations.
fn build_chains(cfg: &CorpusConfig) -> Result<Vec<Vec<usize>>, DatasetError> {
    let a = cfg.num_actions;
    let max_span = cfg.max_horizon.saturating_sub(1).max(1);
    let mut rng = rng_for(cfg.seed, &[TAG_CHAINS]);
    for _ in 0..MAX_CHAIN_ATTEMPTS {
        let mut starts: Vec<usize> = (0..a).collect();
        starts.shuffle(&mut rng);
        let mut used: HashSet<(usize, usize, usize)> = HashSet::new();
        let mut used_tail: HashSet<(usize, (usize, usize), usize)> = HashSet::new();
        let tail = |prev: usize, next: usize| (prev.min(next), prev.max(next));
        let mut chains = Vec::with_capacity(cfg.num_tasks);
        'tasks: for &start in starts.iter().take(cfg.num_tasks) {
            let len = rng.random_range(cfg.chain_len_min..=cfg.chain_len_max);
            let mut chain = vec![start];
            while chain.len() < len {
                let candidates: Vec<usize> = (0..a)
                    .filter(|x| !chain.contains(x))
                    .filter(|&x| {
                        let n = chain.len();
                        (1..=max_span.min(n)).all(|s| {
                            !used.contains(&(chain[n - s], x, s))
                                && (s < 2 || !used_tail.contains(&(chain[n - s], tail(chain[n - 1], x), s)))
                        })
                    })
                    .collect();
                let Some(&next) = candidates.get(rng.random_range(0..candidates.len().max(1))) else {
                    break 'tasks;
                };
                let n = chain.len();
                for s in 1..=max_span.min(n) {
                    used.insert((chain[n - s], next, s));
                    if s >= 2 {
                        used_tail.insert((chain[n - s], tail(chain[n - 1], next), s));
                    }
                }
                chain.push(next);
            }
            chains.push(chain);
        }
        if chains.len() == cfg.num_tasks {
            return Ok(chains);
        }
    }
    Err(DatasetError::Infeasible(format!(
        "no identifiable chains of length {}..={} for {} tasks over {} actions",
        cfg.chain_len_min, cfg.chain_len_max, cfg.num_tasks, cfg.num_actions
    )))
}

fn validate(cfg: &CorpusConfig) -> Result<(), DatasetError> {
    let bad = |m: String| Err(DatasetError::Infeasible(m));
    if cfg.num_tasks < 1 || cfg.num_actions < 2 {
        return bad(format!("need C >= 1 and A >= 2, got C={} A={}", cfg.num_tasks, cfg.num_actions));
    }
    if cfg.num_actions < cfg.num_tasks {
        return bad(format!("A={} too small for {} disjoint chain starts", cfg.num_actions, cfg.num_tasks));
    }
    if cfg.videos_per_task < 1 || cfg.obs_dim < 1 || cfg.text_dim < 1 {
        return bad("videos_per_task, obs_dim and text_dim must be positive".into());
    }
    if cfg.chain_len_min < 2 || cfg.chain_len_min > cfg.chain_len_max || cfg.chain_len_max > cfg.num_actions {
        return bad(format!(
            "chain lengths {}..={} impossible with {} actions",
            cfg.chain_len_min, cfg.chain_len_max, cfg.num_actions
        ));
    }
    if !(cfg.noise_sd >= 0.0 && cfg.noise_sd.is_finite()) || !(0.0..=1.0).contains(&cfg.branch_prob) {
        return bad("noise_sd must be >= 0 and branch_prob in [0, 1]".into());
    }
    Ok(())
}

/// Deterministic synthetic corpus. Frames show the active action's table row
/// plus Gaussian noise; frames between steps show a zero background.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus, DatasetError> {
    validate(cfg)?;
    let chains = build_chains(cfg)?;
    let action_table = table(cfg.seed, TAG_ACTION_TABLE, cfg.num_actions, cfg.obs_dim);
    let language_table = table(cfg.seed, TAG_LANGUAGE_TABLE, cfg.num_actions, cfg.text_dim);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| DatasetError::Invalid(e.to_string()))?;

    let mut videos = Vec::with_capacity(cfg.num_tasks * cfg.videos_per_task);
    for (task, chain) in chains.iter().enumerate() {
        for v in 0..cfg.videos_per_task {
            let mut rng = rng_for(cfg.seed, &[TAG_VIDEO, task as u64, v as u64]);
            let mut actions = chain.clone();
            if actions.len() > 2 && rng.random_bool(cfg.branch_prob) {
                let pos = rng.random_range(1..actions.len() - 1);
                let off_chain: Vec<usize> = (0..cfg.num_actions).filter(|x| !chain.contains(x)).collect();
                if let Some(&alt) = off_chain.get(rng.random_range(0..off_chain.len().max(1))) {
                    actions[pos] = alt;
                }
            }
            let mut t = rng.random_range(2..=4usize);
            let mut steps = Vec::with_capacity(actions.len());
            for (i, &action) in actions.iter().enumerate() {
                let dur = rng.random_range(4..=7usize);
                steps.push(Step {
                    action,
                    start: t as f64,
                    end: (t + dur) as f64,
                });
                t += dur;
                if i + 1 < actions.len() {
                    t += rng.random_range(1..=3usize);
                }
            }
            let duration = t + 3;
            let mut frames = Vec::with_capacity(duration);
            for f in 0..duration {
                let active = steps.iter().find(|s| s.start <= f as f64 && (f as f64) < s.end);
                let frame = match active {
                    Some(s) => action_table[s.action].iter().map(|x| x + noise.sample(&mut rng)).collect(),
                    None => (0..cfg.obs_dim).map(|_| noise.sample(&mut rng)).collect(),
                };
                frames.push(frame);
            }
            videos.push(Video { task, steps, frames });
        }
    }
    Ok(Corpus {
        config: cfg.clone(),
        chains,
        action_table,
        language_table,
        videos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn niv_scale_counts() {
        let c = generate_corpus(&CorpusConfig::default()).unwrap();
        assert_eq!(c.videos.len(), 150);
        assert_eq!(c.chains.len(), 5);
        for v in &c.videos {
            assert!(v.steps.iter().all(|s| s.action < 12 && s.start < s.end));
            assert!(v.steps.windows(2).all(|w| w[0].end <= w[1].start));
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let cfg = CorpusConfig {
            seed: 7,
            videos_per_task: 3,
            ..Default::default()
        };
        let a = serde_json::to_vec(&generate_corpus(&cfg).unwrap()).unwrap();
        let b = serde_json::to_vec(&generate_corpus(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_free_frames_equal_table_rows() {
        let cfg = CorpusConfig {
            noise_sd: 0.0,
            videos_per_task: 2,
            ..Default::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        for v in &c.videos {
            for s in &v.steps {
                for t in s.start as usize..s.end as usize {
                    assert_eq!(v.frame(t), c.action_table[s.action].as_slice());
                }
            }
        }
    }

    #[test]
    fn chain_windows_identify_task_and_middle() {
        let c = generate_corpus(&CorpusConfig::default()).unwrap();
        for horizon in 2..=6 {
            let mut seen: HashMap<(usize, usize), (usize, Vec<usize>)> = HashMap::new();
            for (task, chain) in c.chains.iter().enumerate() {
                assert!(chain.len() >= 6 && chain.len() <= 10);
                for w in chain.windows(horizon) {
                    let key = (w[0], w[horizon - 1]);
                    let value = (task, w.to_vec());
                    if let Some(prev) = seen.insert(key, value.clone()) {
                        assert_eq!(prev, value, "ambiguous window at T={horizon}");
                    }
                }
            }
        }
        let starts: HashSet<usize> = c.chains.iter().map(|ch| ch[0]).collect();
        assert_eq!(starts.len(), c.chains.len());
    }

    #[test]
    fn noise_free_observations_determine_task_and_plan() {
        use crate::dataset::{curate_corpus, CurationMode};
        for seed in 0..4 {
            let cfg = CorpusConfig {
                noise_sd: 0.0,
                seed,
                ..Default::default()
            };
            let c = generate_corpus(&cfg).unwrap();
            for mode in [CurationMode::Pdpp, CurationMode::Kepp] {
                for horizon in 2..=6 {
                    let set = curate_corpus(&c, horizon, mode).unwrap();
                    let mut seen: HashMap<Vec<u64>, (usize, Vec<usize>)> = HashMap::new();
                    for s in &set.samples {
                        let key: Vec<u64> = s.obs_start.iter().chain(&s.obs_goal).map(|v| v.to_bits()).collect();
                        let value = (s.task, s.actions.clone());
                        if let Some(prev) = seen.insert(key, value.clone()) {
                            assert_eq!(prev, value, "seed {seed} {mode} T={horizon}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let too_few = CorpusConfig {
            num_tasks: 5,
            num_actions: 4,
            chain_len_max: 4,
            chain_len_min: 3,
            ..Default::default()
        };
        assert!(matches!(generate_corpus(&too_few), Err(DatasetError::Infeasible(_))));
        let crowded = CorpusConfig {
            num_tasks: 8,
            num_actions: 8,
            chain_len_min: 8,
            chain_len_max: 8,
            ..Default::default()
        };
        assert!(matches!(generate_corpus(&crowded), Err(DatasetError::Infeasible(_))));
    }
}
