//! Forward noising in closed form, a short training run and conditioned sampling.
//!
//! Trains a small denoiser on the synthetic corpus for a few hundred steps and
//! samples plans for held-out samples, with start/goal conditions re-imposed
//! after every reverse step.

use latent_plan::autodiff::AdamWConfig;
use latent_plan::dataset::{curate_corpus, generate_corpus, split, CorpusConfig, CurationMode, Normalizer};
use latent_plan::denoiser::{Denoiser, DenoiserConfig};
use latent_plan::diffusion::{
    build_x0, decode_plan, diffusion_loss, make_schedule, q_forward, sample_batch, Conditions, LossOptions, SampleRequest,
    ScheduleKind, StateLayout, TrainItem,
};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schedule = make_schedule(50, ScheduleKind::Linear, 1e-4, 0.2)?;
    let x0 = vec![1.0, -2.0, 0.5];
    for n in [1, 10, 50] {
        let xn = q_forward(&x0, n, &schedule, &[0.0; 3])?;
        println!("n={n:>2}: alpha_bar {:.4}, noiseless x_n {xn:.4?}", schedule.alpha_bar(n));
    }

    let corpus = generate_corpus(&CorpusConfig::default())?;
    let set = curate_corpus(&corpus, 3, CurationMode::Pdpp)?;
    let (train, test) = split(&set.samples, 0.7, 0)?;
    let norm = Normalizer::fit(&train)?;
    let (train, test) = (norm.apply_all(&train), norm.apply_all(&test));
    let layout = StateLayout { num_tasks: set.num_tasks, num_actions: set.num_actions, obs_dim: set.obs_dim };

    let cfg = DenoiserConfig { channels: (32, 64), time_dim: 32, inject: false, ..DenoiserConfig::new(layout.width(), 50) };
    let mut net = Denoiser::new(cfg, 0)?;
    let items: Vec<TrainItem> = train
        .iter()
        .map(|s| Ok(TrainItem { x0: build_x0(s, s.task, 1.0, &layout)?, cond: Conditions::from_sample(s, s.task), constraint: None }))
        .collect::<Result<_, latent_plan::diffusion::DiffusionError>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let opt = AdamWConfig { lr: 1e-3, ..Default::default() };
    for step in 0..400 {
        let batch: Vec<&TrainItem> = index::sample(&mut rng, items.len(), 32).iter().map(|i| &items[i]).collect();
        net.store.zero_grads();
        let loss = diffusion_loss(&net, &schedule, &batch, &layout, LossOptions::default(), &mut rng)?;
        loss.backward()?;
        net.store.adamw_step(&opt)?;
        if step % 100 == 0 {
            println!("step {step:>3}  loss {:.5}", loss.item());
        }
    }

    let requests: Vec<SampleRequest> = test
        .iter()
        .take(8)
        .enumerate()
        .map(|(i, s)| SampleRequest { cond: Conditions::from_sample(s, s.task), constraint: None, seed: i as u64 })
        .collect();
    let states = sample_batch(&net, &schedule, &requests, &layout, 1.0)?;
    for (x, s) in states.iter().zip(&test) {
        println!("truth {:?}  sampled {:?}", s.actions, decode_plan(x, &layout));
    }
    Ok(())
}
