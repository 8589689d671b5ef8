//! The {full, no epsilon, no injection} ablation table at reduced scale.
//!
//! Each seed trains the VAE and classifier once and the denoiser three times,
//! with observation noise raised so the constraint path has work to do.

use latent_plan::pipeline::{prepare_data, run_ablation, DataSource, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::default();
    cfg.dataset.noise_sd = 0.1;
    cfg.num_steps = 50;
    cfg.channels = (32, 64);
    cfg.diffusion.epochs = 10;
    cfg.diffusion.warmup_epochs = 2;
    cfg.diffusion.decay_window = 4;
    cfg.diffusion.decay_every = 2;
    let data = prepare_data(&cfg, &DataSource::Synthetic)?;
    let dir = std::env::temp_dir().join("latent-plan-ablation");
    let report = run_ablation(&cfg, &data, &[0, 1], &dir)?;
    print!("{}", report.to_csv());
    Ok(())
}
