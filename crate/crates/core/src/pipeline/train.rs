use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use super::{read_required, write_file, PipelineError, RunConfig, StageConfig, CLASSIFIER_CKPT, CONFIG_SNAPSHOT, DENOISER_CKPT, VAE_CKPT};
use crate::autodiff::AdamWConfig;
use crate::classifier::TaskClassifier;
use crate::dataset::{curate_corpus, generate_corpus, read_manifest, split, Normalizer, Sample, SampleSet};
use crate::denoiser::{fusion_input, fusion_input_fresh, Denoiser, DenoiserConfig, FUSION_INPUT_DIM};
use crate::diffusion::{build_x0, diffusion_loss, make_schedule, Conditions, LossOptions, ScheduleKind, StateLayout, TrainItem};
use crate::metrics::aligned_csv;
use crate::seed::{derive_seed, rng_for, TAG_CONSTRAINT_EPS, TAG_FUSION_EPS, TAG_TRAIN_CLASSIFIER, TAG_TRAIN_DIFFUSION, TAG_TRAIN_VAE};
use crate::vae::{LatentCode, Vae};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Vae,
    Classifier,
    Diffusion,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Vae, Stage::Classifier, Stage::Diffusion];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Vae => "vae",
            Stage::Classifier => "classifier",
            Stage::Diffusion => "diffusion",
        }
    }

    pub fn loss_file(self) -> String {
        format!("{}_loss.csv", self.name())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Where curated samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generate and curate the synthetic corpus described by the config.
    Synthetic,
    /// Pre-curated samples from a manifest written by `gen-data` or an external tool.
    Manifest(PathBuf),
}

/// Normalized train/test splits with the fitted scaling.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: SampleSet,
    pub test: SampleSet,
    pub normalizer: Normalizer,
}

impl Prepared {
    pub fn layout(&self) -> StateLayout {
        StateLayout {
            num_tasks: self.train.num_tasks,
            num_actions: self.train.num_actions,
            obs_dim: self.train.obs_dim,
        }
    }
}

/// Curated samples for `cfg.horizon`, split with the dataset seed and min-max scaled on train.
///
/// The split depends only on the dataset, so runs that differ in training
/// seed see the same train and test samples.
pub fn prepare_data(cfg: &RunConfig, source: &DataSource) -> Result<Prepared, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let set = match source {
        DataSource::Synthetic => curate_corpus(&generate_corpus(&cfg.dataset)?, cfg.horizon, cfg.curation)?,
        DataSource::Manifest(path) => {
            let set = read_manifest(path)?;
            if let Some(s) = set.samples.iter().find(|s| s.horizon() != cfg.horizon) {
                return Err(PipelineError::Config(format!(
                    "manifest holds a horizon-{} sample but the config asks for horizon {}",
                    s.horizon(),
                    cfg.horizon
                )));
            }
            set
        }
    };
    let (train, test) = split(&set.samples, cfg.train_ratio, cfg.dataset.seed)?;
    if test.is_empty() {
        return Err(PipelineError::Config(format!("{} samples leave an empty test split", set.len())));
    }
    let normalizer = Normalizer::fit(&train)?;
    Ok(Prepared {
        train: set.with_samples(normalizer.apply_all(&train)),
        test: set.with_samples(normalizer.apply_all(&test)),
        normalizer,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

pub(crate) fn loss_csv(records: &[LossRecord]) -> String {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| vec![r.step.to_string(), r.epoch.to_string(), format!("{:e}", r.lr), format!("{:.6}", r.loss)])
        .collect();
    aligned_csv(&["step", "epoch", "lr", "loss"], &rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub stage: Stage,
    pub losses: Vec<LossRecord>,
    pub checkpoint: PathBuf,
    /// Held-out task accuracy, classifier stage only.
    pub test_accuracy: Option<f64>,
}

impl StageSummary {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// Runs `epochs * steps_per_epoch` steps, each on `batch` distinct indices drawn from `0..n`.
fn run_steps(
    stage: Stage,
    sc: &StageConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
    mut step_fn: impl FnMut(usize, &[usize], &AdamWConfig, &mut ChaCha8Rng) -> Result<f64, PipelineError>,
) -> Result<Vec<LossRecord>, PipelineError> {
    if n == 0 {
        return Err(PipelineError::Config(format!("{stage}: no training samples")));
    }
    let sched = sc.lr_schedule();
    let mut out = Vec::with_capacity(sc.total_steps());
    for step in 0..sc.total_steps() {
        let idx = index::sample(rng, n, sc.batch.min(n)).into_vec();
        let opt = AdamWConfig {
            lr: sched.lr_at(step),
            weight_decay: sc.weight_decay,
            ..AdamWConfig::default()
        };
        let loss = step_fn(step, &idx, &opt, rng)?;
        if !loss.is_finite() {
            return Err(PipelineError::NonFinite { stage, step });
        }
        out.push(LossRecord {
            step,
            epoch: step / sc.steps_per_epoch,
            lr: opt.lr,
            loss,
        });
    }
    Ok(out)
}

fn train_vae(cfg: &RunConfig, data: &Prepared) -> Result<(Vae, Vec<LossRecord>), PipelineError> {
    let states: Vec<Vec<f64>> = data.train.samples.iter().flat_map(|s| [s.start_state(), s.goal_state()]).collect();
    let mut vae = Vae::new(data.train.obs_dim + data.train.text_dim, cfg.seed)?;
    let mut rng = rng_for(cfg.seed, &[TAG_TRAIN_VAE]);
    let losses = run_steps(Stage::Vae, &cfg.vae, states.len(), &mut rng, |_, idx, opt, rng| {
        let batch: Vec<&[f64]> = idx.iter().map(|&i| states[i].as_slice()).collect();
        Ok(vae.train_step(&batch, opt, rng)?.total())
    })?;
    vae.freeze();
    Ok((vae, losses))
}

fn train_classifier(cfg: &RunConfig, data: &Prepared) -> Result<(TaskClassifier, Vec<LossRecord>), PipelineError> {
    let mut clf = TaskClassifier::new(data.train.obs_dim, data.train.num_tasks, cfg.seed)?;
    let mut rng = rng_for(cfg.seed, &[TAG_TRAIN_CLASSIFIER]);
    let samples = &data.train.samples;
    let losses = run_steps(Stage::Classifier, &cfg.classifier, samples.len(), &mut rng, |_, idx, opt, _| {
        let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
        Ok(clf.train_step(&batch, opt)?)
    })?;
    Ok((clf, losses))
}

/// Fusion-net input for one sample, or `None` when constraints are not injected.
///
/// `seed` drives the reparameterization noise; with `fresh_fusion_eps` the
/// noise slots are redrawn from a separate stream.
pub(crate) fn constraint_for(
    cfg: &RunConfig,
    vae: &Vae,
    sample: &Sample,
    seed: u64,
) -> Result<Option<[f64; FUSION_INPUT_DIM]>, PipelineError> {
    if !cfg.flags.inject_constraints {
        return Ok(None);
    }
    let (zs, zg): (LatentCode, LatentCode) = vae.encode_constraints(sample, cfg.flags.use_eps, seed)?;
    Ok(Some(if cfg.flags.fresh_fusion_eps && cfg.flags.use_eps {
        fusion_input_fresh(&zs, &zg, &mut rng_for(seed, &[TAG_FUSION_EPS]))
    } else {
        fusion_input(&zs, &zg, cfg.flags.use_eps)
    }))
}

pub(crate) fn denoiser_config(cfg: &RunConfig, layout: &StateLayout) -> DenoiserConfig {
    DenoiserConfig {
        channels: cfg.channels,
        time_dim: cfg.time_dim,
        inject: cfg.flags.inject_constraints,
        ..DenoiserConfig::new(layout.width(), cfg.num_steps)
    }
}

/// Loads `vae.ckpt` and insists it was frozen by the VAE stage.
pub(crate) fn load_frozen_vae(dir: &Path) -> Result<Vae, PipelineError> {
    let vae = Vae::from_checkpoint(&read_required(dir, VAE_CKPT, "vae")?)?;
    if !vae.is_frozen() {
        return Err(PipelineError::Prerequisite(format!(
            "{} holds an unfrozen VAE",
            dir.join(VAE_CKPT).display()
        )));
    }
    Ok(vae)
}

fn train_diffusion(cfg: &RunConfig, data: &Prepared, dir: &Path) -> Result<(Denoiser, Vec<LossRecord>), PipelineError> {
    let vae = load_frozen_vae(dir)?;
    if vae.input_dim() != data.train.obs_dim + data.train.text_dim {
        return Err(PipelineError::Mismatch(format!(
            "VAE input width {} vs data width {}",
            vae.input_dim(),
            data.train.obs_dim + data.train.text_dim
        )));
    }
    let before = vae.store.checksum();
    let layout = data.layout();
    let schedule = make_schedule(cfg.num_steps, ScheduleKind::Linear, cfg.beta_start, cfg.beta_end)?;
    let mut net = Denoiser::new(denoiser_config(cfg, &layout), cfg.seed)?;
    let samples = &data.train.samples;
    let x0s = samples
        .iter()
        .map(|s| build_x0(s, s.task, cfg.onehot_scale, &layout))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = LossOptions {
        onehot_scale: cfg.onehot_scale,
        masked: cfg.flags.loss_masking,
    };
    let mut rng = rng_for(cfg.seed, &[TAG_TRAIN_DIFFUSION]);
    let losses = run_steps(Stage::Diffusion, &cfg.diffusion, samples.len(), &mut rng, |step, idx, opt, rng| {
        let items = idx
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                let seed = derive_seed(cfg.seed, &[TAG_CONSTRAINT_EPS, step as u64, j as u64]);
                Ok(TrainItem {
                    x0: x0s[i].clone(),
                    cond: Conditions::from_sample(&samples[i], samples[i].task),
                    constraint: constraint_for(cfg, &vae, &samples[i], seed)?,
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let refs: Vec<&TrainItem> = items.iter().collect();
        net.store.zero_grads();
        let loss = diffusion_loss(&net, &schedule, &refs, &layout, opts, rng)?;
        loss.backward()?;
        net.store.adamw_step(opt)?;
        Ok(loss.item())
    })?;
    if vae.store.checksum() != before {
        return Err(PipelineError::FreezeViolation);
    }
    let mut ckpt = net.to_checkpoint();
    ckpt.extend(schedule.to_checkpoint());
    ckpt.write(&dir.join(DENOISER_CKPT))?;
    Ok((net, losses))
}

/// Trains one stage into `dir`, writing its checkpoint, loss curve and a config snapshot.
///
/// The diffusion stage needs the frozen `vae.ckpt` from an earlier VAE stage.
pub fn run_stage(cfg: &RunConfig, data: &Prepared, stage: Stage, dir: &Path) -> Result<StageSummary, PipelineError> {
    let (checkpoint, losses, test_accuracy) = match stage {
        Stage::Vae => {
            let (vae, losses) = train_vae(cfg, data)?;
            let path = dir.join(VAE_CKPT);
            vae.to_checkpoint().write(&path)?;
            (path, losses, None)
        }
        Stage::Classifier => {
            let (clf, losses) = train_classifier(cfg, data)?;
            let path = dir.join(CLASSIFIER_CKPT);
            clf.to_checkpoint().write(&path)?;
            (path, losses, Some(clf.accuracy(&data.test.samples)?))
        }
        Stage::Diffusion => {
            let (_, losses) = train_diffusion(cfg, data, dir)?;
            (dir.join(DENOISER_CKPT), losses, None)
        }
    };
    write_file(&dir.join(stage.loss_file()), &loss_csv(&losses))?;
    write_file(&dir.join(CONFIG_SNAPSHOT), &cfg.render())?;
    Ok(StageSummary {
        stage,
        losses,
        checkpoint,
        test_accuracy,
    })
}
