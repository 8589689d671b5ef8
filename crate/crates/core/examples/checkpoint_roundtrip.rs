//! Writes a denoiser checkpoint with its noise schedule and reads it back.
//!
//! The reloaded network produces bit-identical outputs; the entry listing is
//! what `latent-plan inspect-checkpoint` prints.

use latent_plan::autodiff::{no_grad, Checkpoint, Tensor};
use latent_plan::denoiser::{Denoiser, DenoiserConfig};
use latent_plan::diffusion::{make_schedule, NoiseSchedule, ScheduleKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DenoiserConfig { channels: (16, 32), time_dim: 16, ..DenoiserConfig::new(33, 200) };
    let net = Denoiser::new(cfg, 3)?;
    let schedule = make_schedule(200, ScheduleKind::Linear, 1e-4, 0.05)?;
    let mut ckpt = net.to_checkpoint();
    ckpt.extend(schedule.to_checkpoint());

    let path = std::env::temp_dir().join("latent-plan-example").join("denoiser.ckpt");
    ckpt.write(&path)?;
    let back = Checkpoint::read(&path)?;
    let net2 = Denoiser::from_checkpoint(&back)?;
    let schedule2 = NoiseSchedule::from_checkpoint(&back)?;

    let x = Tensor::new((0..3 * 33).map(|i| (i as f64).cos()).collect(), &[1, 3, 33])?;
    let _g = no_grad();
    let a = net.forward(&x, &[17], None)?.to_vec();
    let b = net2.forward(&x, &[17], None)?.to_vec();
    println!("checksum before {}", &net.store.checksum()[..16]);
    println!("checksum after  {}", &net2.store.checksum()[..16]);
    println!("outputs bit-identical: {}", a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    println!("schedule restored: {}", (1..=200).all(|n| schedule.beta(n) == schedule2.beta(n)));
    for e in &back.entries {
        println!("  {:<24} {:?}", e.name, e.shape);
    }
    Ok(())
}
