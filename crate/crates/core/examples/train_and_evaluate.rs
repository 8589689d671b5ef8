//! Full pipeline at reduced scale: VAE, classifier, diffusion, evaluation.
//!
//! Pass `full` as the first argument for the default desk-scale settings;
//! otherwise the diffusion stage is shortened so the example finishes quickly.

use latent_plan::pipeline::{evaluate, prepare_data, run_stage, DataSource, RunConfig, Stage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::default();
    if std::env::args().nth(1).as_deref() != Some("full") {
        cfg.num_steps = 50;
        cfg.channels = (32, 64);
        cfg.diffusion.epochs = 12;
        cfg.diffusion.warmup_epochs = 2;
        cfg.diffusion.decay_window = 4;
        cfg.diffusion.decay_every = 2;
    }
    let dir = std::env::temp_dir().join("latent-plan-run");
    let data = prepare_data(&cfg, &DataSource::Synthetic)?;
    println!("{} train / {} test samples, fingerprint {}", data.train.len(), data.test.len(), cfg.fingerprint());
    for stage in Stage::ALL {
        let s = run_stage(&cfg, &data, stage, &dir)?;
        println!("{stage}: {} steps, final loss {:.5}", s.losses.len(), s.final_loss());
    }
    let out = evaluate(&cfg, &data, &dir)?;
    print!("{}", out.to_csv());
    println!("classifier accuracy {:.4}; reports in {}", out.classifier_accuracy, dir.display());
    Ok(())
}
