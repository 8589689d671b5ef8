//! Trains the state VAE, freezes it, and encodes start/goal constraints.
//!
//! Prints the reconstruction and KL terms during training, then the latent
//! codes of one sample with and without reparameterization noise.

use latent_plan::autodiff::AdamWConfig;
use latent_plan::dataset::{curate_corpus, generate_corpus, CorpusConfig, CurationMode, Normalizer};
use latent_plan::vae::Vae;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_corpus(&CorpusConfig::default())?;
    let set = curate_corpus(&corpus, 3, CurationMode::Pdpp)?;
    let samples = Normalizer::fit(&set.samples)?.apply_all(&set.samples);
    let states: Vec<Vec<f64>> = samples.iter().flat_map(|s| [s.start_state(), s.goal_state()]).collect();

    let mut vae = Vae::new(states[0].len(), 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let opt = AdamWConfig::default();
    for epoch in 0..15 {
        let l = vae.train_epoch(&states, 64, &opt, &mut rng)?;
        if epoch % 5 == 4 {
            println!("epoch {:>2}  bce {:.3}  kl {:.3}", epoch + 1, l.recon_bce, l.kl);
        }
    }
    vae.freeze();

    let s = &samples[0];
    let (zs, zg) = vae.encode_constraints(s, true, 7)?;
    let (ms, mg) = vae.encode_constraints(s, false, 7)?;
    println!("actions {:?}", s.actions);
    println!("start: mu {:?} sigma {:?} z {:?}", zs.mu, zs.sigma(), zs.z);
    println!("goal:  mu {:?} sigma {:?} z {:?}", zg.mu, zg.sigma(), zg.z);
    println!("without noise z equals mu: {}", ms.z == ms.mu && mg.z == mg.mu);
    Ok(())
}
