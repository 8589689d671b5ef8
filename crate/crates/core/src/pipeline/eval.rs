use std::path::Path;

use serde::Serialize;

use super::train::{constraint_for, denoiser_config, load_frozen_vae};
use super::{read_required, write_file, PipelineError, Prepared, RunConfig, CLASSIFIER_CKPT, DENOISER_CKPT, REPORT_CSV, REPORT_JSON};
use crate::classifier::TaskClassifier;
use crate::denoiser::Denoiser;
use crate::diffusion::{decode_plan, make_schedule, sample_parallel, Conditions, NoiseSchedule, SampleRequest, ScheduleKind, StateLayout};
use crate::metrics::{apply_gt_boundary, random_planner, reports_to_csv, PlanPair, PlanReport};
use crate::seed::{derive_seed, TAG_CONSTRAINT_EPS, TAG_RANDOM_PLANNER, TAG_SAMPLER};
use crate::vae::Vae;

/// Distinguishes evaluation-time constraint noise from the per-step training draws.
const EVAL_STREAM: u64 = u64::MAX;

/// The three trained stages of one run.
#[derive(Debug)]
pub struct Models {
    pub vae: Vae,
    pub classifier: TaskClassifier,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
}

/// Loads all checkpoints from `dir` and checks them against `cfg` and `layout`.
pub fn load_models(cfg: &RunConfig, layout: &StateLayout, dir: &Path) -> Result<Models, PipelineError> {
    let vae = load_frozen_vae(dir)?;
    let classifier = TaskClassifier::from_checkpoint(&read_required(dir, CLASSIFIER_CKPT, "classifier")?)?;
    let ckpt = read_required(dir, DENOISER_CKPT, "diffusion")?;
    let denoiser = Denoiser::from_checkpoint(&ckpt)?;
    let schedule = NoiseSchedule::from_checkpoint(&ckpt)?;
    let expected = denoiser_config(cfg, layout);
    if *denoiser.config() != expected {
        return Err(PipelineError::Mismatch(format!(
            "{DENOISER_CKPT} has {:?}, config implies {expected:?}",
            denoiser.config()
        )));
    }
    let wanted = make_schedule(cfg.num_steps, ScheduleKind::Linear, cfg.beta_start, cfg.beta_end)?;
    if (1..=cfg.num_steps).any(|n| schedule.beta(n) != wanted.beta(n)) {
        return Err(PipelineError::Mismatch(format!("{DENOISER_CKPT} noise schedule differs from the config")));
    }
    if classifier.num_tasks() != layout.num_tasks {
        return Err(PipelineError::Mismatch(format!(
            "{CLASSIFIER_CKPT} predicts {} tasks, data has {}",
            classifier.num_tasks(),
            layout.num_tasks
        )));
    }
    Ok(Models {
        vae,
        classifier,
        denoiser,
        schedule,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutput {
    pub fingerprint: String,
    /// `gt_boundary` when the config asks for ground-truth boundaries, else `plain`.
    pub headline: PlanReport,
    pub plain: PlanReport,
    pub gt_boundary: PlanReport,
    /// Uniform random plans scored against the same ground truth.
    pub random_baseline: PlanReport,
    pub classifier_accuracy: f64,
    #[serde(skip)]
    pub pairs: Vec<PlanPair>,
    #[serde(skip)]
    pub predicted_tasks: Vec<usize>,
}

impl EvalOutput {
    pub fn to_csv(&self) -> String {
        reports_to_csv(&[self.plain.clone(), self.gt_boundary.clone(), self.random_baseline.clone()])
    }
}

/// Plans every test sample with the predicted task and scores the result, without touching disk.
///
/// Each plan is sampled from its own seed, so the output does not depend on
/// `eval_chunk` or on thread scheduling.
pub fn evaluate_models(cfg: &RunConfig, data: &Prepared, models: &Models) -> Result<EvalOutput, PipelineError> {
    let layout = data.layout();
    let test = &data.test.samples;
    let predicted_tasks = models.classifier.predict_samples(test)?;
    let requests = test
        .iter()
        .zip(&predicted_tasks)
        .enumerate()
        .map(|(i, (s, &task))| {
            let eps_seed = derive_seed(cfg.seed, &[TAG_CONSTRAINT_EPS, EVAL_STREAM, i as u64]);
            Ok(SampleRequest {
                cond: Conditions::from_sample(s, task),
                constraint: constraint_for(cfg, &models.vae, s, eps_seed)?,
                seed: derive_seed(cfg.seed, &[TAG_SAMPLER, i as u64]),
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let states = sample_parallel(&models.denoiser, &models.schedule, &requests, &layout, cfg.onehot_scale, cfg.eval_chunk)?;
    let pairs = states
        .iter()
        .zip(test)
        .map(|(x, s)| PlanPair::new(decode_plan(x, &layout), s.actions.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let gt_pairs = pairs.iter().map(apply_gt_boundary).collect::<Result<Vec<_>, _>>()?;
    let fp = cfg.fingerprint();
    let (name, curation, mode) = (cfg.name.as_str(), cfg.curation.to_string(), cfg.flags.macc_mode);
    let plain = PlanReport::from_pairs(&pairs, mode, name, &curation, false, &fp)?;
    let gt_boundary = PlanReport::from_pairs(&gt_pairs, mode, name, &curation, true, &fp)?;
    if gt_boundary.sr < plain.sr || gt_boundary.macc_positional < plain.macc_positional {
        return Err(PipelineError::Invariant(format!(
            "ground-truth boundaries lowered SR from {} to {}",
            plain.sr, gt_boundary.sr
        )));
    }
    let truths: Vec<Vec<usize>> = test.iter().map(|s| s.actions.clone()).collect();
    let random = random_planner(&truths, layout.num_actions, derive_seed(cfg.seed, &[TAG_RANDOM_PLANNER]));
    let random_baseline = PlanReport::from_pairs(&random, mode, &format!("{name}/random"), &curation, false, &fp)?;
    let hits = predicted_tasks.iter().zip(test).filter(|(p, s)| **p == s.task).count();
    Ok(EvalOutput {
        fingerprint: fp,
        headline: if cfg.flags.gt_boundary_eval { gt_boundary.clone() } else { plain.clone() },
        plain,
        gt_boundary,
        random_baseline,
        classifier_accuracy: hits as f64 / test.len() as f64,
        pairs,
        predicted_tasks,
    })
}

/// Loads the run in `dir`, evaluates it and writes `report.json` and `report.csv` there.
pub fn evaluate(cfg: &RunConfig, data: &Prepared, dir: &Path) -> Result<EvalOutput, PipelineError> {
    let models = load_models(cfg, &data.layout(), dir)?;
    let out = evaluate_models(cfg, data, &models)?;
    let json = serde_json::to_string_pretty(&out).map_err(|e| PipelineError::Invariant(e.to_string()))?;
    write_file(&dir.join(REPORT_JSON), &(json + "\n"))?;
    write_file(&dir.join(REPORT_CSV), &out.to_csv())?;
    Ok(out)
}
