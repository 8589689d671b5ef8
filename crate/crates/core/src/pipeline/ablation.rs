use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{evaluate, io_err, run_stage, write_file, PipelineError, Prepared, RunConfig, Stage, CLASSIFIER_CKPT, VAE_CKPT};
use crate::metrics::aligned_csv;

/// Which parts of the constraint path a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Constraint code is `μ` alone; the noise slots are zero.
    NoEps,
    /// The fusion net is bypassed and frozen, so `z_c = 0`.
    NoInjection,
}

pub const VARIANTS: [Variant; 3] = [Variant::Full, Variant::NoEps, Variant::NoInjection];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoEps => "no_eps",
            Variant::NoInjection => "no_injection",
        }
    }

    pub fn apply(self, cfg: &mut RunConfig) {
        cfg.flags.use_eps = self != Variant::NoEps;
        cfg.flags.inject_constraints = self != Variant::NoInjection;
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub sr: f64,
    pub macc: f64,
    pub msiou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub fingerprint: String,
    pub rows: Vec<AblationRow>,
    /// One row per variant; `seed` is the number of seeds aggregated.
    pub medians: Vec<AblationRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl AblationReport {
    pub fn median(&self, variant: Variant) -> Option<&AblationRow> {
        self.medians.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let cell = |r: &AblationRow, seed: String| {
            vec![
                r.variant.to_string(),
                seed,
                format!("{:.4}", r.sr),
                format!("{:.4}", r.macc),
                format!("{:.4}", r.msiou),
            ]
        };
        let mut rows: Vec<Vec<String>> = self.rows.iter().map(|r| cell(r, r.seed.to_string())).collect();
        rows.extend(self.medians.iter().map(|r| cell(r, "median".into())));
        aligned_csv(&["variant", "seed", "SR", "mAcc", "mSIoU"], &rows)
    }
}

/// Every variant under every seed, with per-variant medians.
///
/// The VAE and classifier do not depend on the variant, so they are trained
/// once per seed in `dir/seed-<s>` and copied into each variant directory.
pub fn run_ablation(cfg: &RunConfig, data: &Prepared, seeds: &[u64], dir: &Path) -> Result<AblationReport, PipelineError> {
    if seeds.is_empty() {
        return Err(PipelineError::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut base = cfg.clone();
        base.seed = seed;
        let seed_dir = dir.join(format!("seed-{seed}"));
        run_stage(&base, data, Stage::Vae, &seed_dir)?;
        run_stage(&base, data, Stage::Classifier, &seed_dir)?;
        for variant in VARIANTS {
            let mut vc = base.clone();
            variant.apply(&mut vc);
            let vdir = seed_dir.join(variant.name());
            fs::create_dir_all(&vdir).map_err(io_err(&vdir))?;
            for name in [VAE_CKPT, CLASSIFIER_CKPT] {
                fs::copy(seed_dir.join(name), vdir.join(name)).map_err(io_err(&vdir))?;
            }
            run_stage(&vc, data, Stage::Diffusion, &vdir)?;
            let report = evaluate(&vc, data, &vdir)?.headline;
            rows.push(AblationRow {
                variant,
                seed,
                sr: report.sr,
                macc: report.macc,
                msiou: report.msiou,
            });
        }
    }
    let medians = VARIANTS
        .iter()
        .map(|&variant| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == variant).collect();
            AblationRow {
                variant,
                seed: mine.len() as u64,
                sr: median(mine.iter().map(|r| r.sr).collect()),
                macc: median(mine.iter().map(|r| r.macc).collect()),
                msiou: median(mine.iter().map(|r| r.msiou).collect()),
            }
        })
        .collect();
    let report = AblationReport {
        fingerprint: cfg.fingerprint(),
        rows,
        medians,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| PipelineError::Invariant(e.to_string()))?;
    write_file(&dir.join("ablation.json"), &(json + "\n"))?;
    write_file(&dir.join("ablation.csv"), &report.to_csv())?;
    Ok(report)
}
