//! Gaussian VAE over `observation ⊕ language` state vectors.
//!
//! After its own training phase the VAE is frozen and only supplies latent
//! codes for the start and goal states of each sample.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autodiff::nn::Linear;
use crate::autodiff::{
    bce_with_logits, gaussian_kl_to_std_normal, no_grad, AdamWConfig, Checkpoint, CheckpointError, ParamStore, Tensor,
    TensorError,
};
use crate::dataset::Sample;
use crate::seed::{rng_for, TAG_CONSTRAINT_EPS, TAG_INIT_VAE};

pub const LATENT_DIM: usize = 2;
pub const HIDDEN_DIM: usize = 512;
/// `log σ²` is clamped to `[-LOGVAR_BOUND, LOGVAR_BOUND]`.
pub const LOGVAR_BOUND: f64 = 10.0;
const ARCH_ENTRY: &str = "vae.arch";

#[derive(Debug, Error)]
pub enum VaeError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("expected input of dimension {expected}, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("training targets must lie in [0, 1], found {0}")]
    TargetRange(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("constraint encoding needs a frozen VAE")]
    NotFrozen,
    #[error("cannot train a frozen VAE")]
    Frozen,
}

/// One reparameterized latent draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentCode {
    pub mu: [f64; LATENT_DIM],
    pub logvar: [f64; LATENT_DIM],
    pub z: [f64; LATENT_DIM],
    pub eps: [f64; LATENT_DIM],
}

impl LatentCode {
    pub fn sigma(&self) -> [f64; LATENT_DIM] {
        self.logvar.map(|lv| (0.5 * lv).exp())
    }
}

/// `z = μ + exp(½ log σ²) ⊙ ε`; `log σ² = -∞` gives `z = μ`.
pub fn reparameterize(mu: [f64; LATENT_DIM], logvar: [f64; LATENT_DIM], eps: [f64; LATENT_DIM]) -> LatentCode {
    let mut z = mu;
    for i in 0..LATENT_DIM {
        z[i] += (0.5 * logvar[i]).exp() * eps[i];
    }
    LatentCode { mu, logvar, z, eps }
}

pub fn sample_eps(rng: &mut impl Rng) -> [f64; LATENT_DIM] {
    std::array::from_fn(|_| rng.sample(StandardNormal))
}

/// Mean per-row loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    pub recon_bce: f64,
    pub kl: f64,
}

impl VaeLoss {
    pub fn total(&self) -> f64 {
        self.recon_bce + self.kl
    }
}

#[derive(Debug)]
pub struct Vae {
    pub store: ParamStore,
    input_dim: usize,
    enc_hidden: Linear,
    enc_mu: Linear,
    enc_logvar: Linear,
    dec_hidden: Linear,
    dec_out: Linear,
    frozen: bool,
}

impl Vae {
    pub fn new(input_dim: usize, seed: u64) -> Result<Vae, VaeError> {
        if input_dim == 0 {
            return Err(VaeError::InputDim { expected: 1, got: 0 });
        }
        let mut rng = rng_for(seed, &[TAG_INIT_VAE]);
        let mut store = ParamStore::new();
        let enc_hidden = Linear::new(&mut store, "vae.enc.hidden", input_dim, HIDDEN_DIM, &mut rng)?;
        let enc_mu = Linear::new(&mut store, "vae.enc.mu", HIDDEN_DIM, LATENT_DIM, &mut rng)?;
        let enc_logvar = Linear::new(&mut store, "vae.enc.logvar", HIDDEN_DIM, LATENT_DIM, &mut rng)?;
        let dec_hidden = Linear::new(&mut store, "vae.dec.hidden", LATENT_DIM, HIDDEN_DIM, &mut rng)?;
        let dec_out = Linear::new(&mut store, "vae.dec.out", HIDDEN_DIM, input_dim, &mut rng)?;
        Ok(Vae {
            store,
            input_dim,
            enc_hidden,
            enc_mu,
            enc_logvar,
            dec_hidden,
            dec_out,
            frozen: false,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Ends the training phase: no parameter takes gradients afterwards.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.store.set_requires_grad(false);
    }

    fn check_dim(&self, got: usize) -> Result<(), VaeError> {
        if got != self.input_dim {
            return Err(VaeError::InputDim {
                expected: self.input_dim,
                got,
            });
        }
        Ok(())
    }

    /// `[B, d] -> (μ [B, 2], log σ² [B, 2])`.
    pub fn encode_batch(&self, x: &Tensor) -> Result<(Tensor, Tensor), VaeError> {
        self.check_dim(*x.shape().last().unwrap_or(&0))?;
        let h = self.enc_hidden.forward(x)?.relu()?;
        let mu = self.enc_mu.forward(&h)?;
        let logvar = self.enc_logvar.forward(&h)?.clamp(-LOGVAR_BOUND, LOGVAR_BOUND)?;
        Ok((mu, logvar))
    }

    /// `[B, 2] -> [B, d]` pre-sigmoid logits.
    pub fn decode_logits(&self, z: &Tensor) -> Result<Tensor, VaeError> {
        let h = self.dec_hidden.forward(z)?.relu()?;
        Ok(self.dec_out.forward(&h)?)
    }

    pub fn encode(&self, x: &[f64]) -> Result<([f64; LATENT_DIM], [f64; LATENT_DIM]), VaeError> {
        self.check_dim(x.len())?;
        let _guard = no_grad();
        let (mu, logvar) = self.encode_batch(&Tensor::new(x.to_vec(), &[1, x.len()])?)?;
        let (mu, logvar) = (mu.to_vec(), logvar.to_vec());
        Ok((
            std::array::from_fn(|i| mu[i]),
            std::array::from_fn(|i| logvar[i]),
        ))
    }

    /// Reconstruction in `(0, 1)`.
    pub fn decode(&self, z: &[f64; LATENT_DIM]) -> Result<Vec<f64>, VaeError> {
        let _guard = no_grad();
        let logits = self.decode_logits(&Tensor::new(z.to_vec(), &[1, LATENT_DIM])?)?;
        Ok(logits.sigmoid()?.to_vec())
    }

    fn batch_tensor(&self, batch: &[&[f64]]) -> Result<Tensor, VaeError> {
        if batch.is_empty() {
            return Err(VaeError::EmptyBatch);
        }
        let mut flat = Vec::with_capacity(batch.len() * self.input_dim);
        for row in batch {
            self.check_dim(row.len())?;
            if let Some(bad) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(VaeError::TargetRange(*bad));
            }
            flat.extend_from_slice(row);
        }
        Ok(Tensor::new(flat, &[batch.len(), self.input_dim])?)
    }

    /// Builds the ELBO graph for `batch` with the given noise, without stepping.
    pub fn loss(&self, batch: &[&[f64]], eps: &[[f64; LATENT_DIM]]) -> Result<(Tensor, VaeLoss), VaeError> {
        let x = self.batch_tensor(batch)?;
        let (mu, logvar) = self.encode_batch(&x)?;
        let eps = Tensor::new(eps.iter().flatten().copied().collect(), &[batch.len(), LATENT_DIM])?;
        let z = mu.add(&logvar.scale(0.5)?.exp()?.mul(&eps)?)?;
        let recon = bce_with_logits(&self.decode_logits(&z)?, &x)?;
        let kl = gaussian_kl_to_std_normal(&mu, &logvar)?;
        let parts = VaeLoss {
            recon_bce: recon.item(),
            kl: kl.item(),
        };
        Ok((recon.add(&kl)?, parts))
    }

    /// One AdamW step on `BCE + KL` with fresh noise from `rng`.
    pub fn train_step(&mut self, batch: &[&[f64]], opt: &AdamWConfig, rng: &mut impl Rng) -> Result<VaeLoss, VaeError> {
        if self.frozen {
            return Err(VaeError::Frozen);
        }
        let eps: Vec<_> = (0..batch.len()).map(|_| sample_eps(rng)).collect();
        self.store.zero_grads();
        let (loss, parts) = self.loss(batch, &eps)?;
        loss.backward()?;
        self.store.adamw_step(opt)?;
        Ok(parts)
    }

    /// Shuffled minibatch pass over `data`; returns the row-weighted mean losses.
    pub fn train_epoch(
        &mut self,
        data: &[Vec<f64>],
        batch_size: usize,
        opt: &AdamWConfig,
        rng: &mut impl Rng,
    ) -> Result<VaeLoss, VaeError> {
        if data.is_empty() || batch_size == 0 {
            return Err(VaeError::EmptyBatch);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let mut acc = VaeLoss { recon_bce: 0.0, kl: 0.0 };
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
            let l = self.train_step(&batch, opt, rng)?;
            acc.recon_bce += l.recon_bce * chunk.len() as f64;
            acc.kl += l.kl * chunk.len() as f64;
        }
        let n = data.len() as f64;
        Ok(VaeLoss {
            recon_bce: acc.recon_bce / n,
            kl: acc.kl / n,
        })
    }

    /// Latent codes of the start and goal states, with noise seeded by `seed`.
    ///
    /// `use_eps = false` forces `ε = 0`, so `z = μ`.
    pub fn encode_constraints(
        &self,
        sample: &Sample,
        use_eps: bool,
        seed: u64,
    ) -> Result<(LatentCode, LatentCode), VaeError> {
        if !self.frozen {
            return Err(VaeError::NotFrozen);
        }
        let (mu_s, lv_s) = self.encode(&sample.start_state())?;
        let (mu_g, lv_g) = self.encode(&sample.goal_state())?;
        let (eps_s, eps_g) = if use_eps {
            let mut rng = rng_for(seed, &[TAG_CONSTRAINT_EPS]);
            (sample_eps(&mut rng), sample_eps(&mut rng))
        } else {
            ([0.0; LATENT_DIM], [0.0; LATENT_DIM])
        };
        Ok((reparameterize(mu_s, lv_s, eps_s), reparameterize(mu_g, lv_g, eps_g)))
    }

    /// Parameters plus a `vae.arch` entry `[input_dim, hidden, latent, frozen]`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.store.to_checkpoint();
        ckpt.push(
            ARCH_ENTRY,
            vec![4],
            vec![
                self.input_dim as f64,
                HIDDEN_DIM as f64,
                LATENT_DIM as f64,
                if self.frozen { 1.0 } else { 0.0 },
            ],
        );
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Vae, VaeError> {
        let arch = ckpt
            .get(ARCH_ENTRY)
            .ok_or_else(|| CheckpointError::MissingEntry(ARCH_ENTRY.into()))?;
        let meta = &arch.data;
        if meta.len() != 4 || meta[1] != HIDDEN_DIM as f64 || meta[2] != LATENT_DIM as f64 || meta[0] < 1.0 {
            return Err(CheckpointError::MetaMismatch {
                name: ARCH_ENTRY.into(),
                detail: format!("{meta:?}"),
            }
            .into());
        }
        let mut vae = Vae::new(meta[0] as usize, 0)?;
        vae.store.load_checkpoint(ckpt)?;
        if meta[3] != 0.0 {
            vae.freeze();
        }
        Ok(vae)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{curate_corpus, generate_corpus, CorpusConfig, CurationMode, Normalizer};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_params(vae: &Vae) {
        for (_, p) in vae.store.iter() {
            p.update_data(|d| d.fill(0.0));
        }
    }

    fn set_param(vae: &Vae, name: &str, values: &[f64]) {
        vae.store.get(name).unwrap().update_data(|d| d.copy_from_slice(values));
    }

    #[test]
    fn encode_shapes_and_affine_identity() {
        let vae = Vae::new(6, 1).unwrap();
        let x = [0.2; 6];
        let (mu, lv) = vae.encode(&x).unwrap();
        assert_eq!(vae.encode(&x).unwrap(), (mu, lv));
        assert!(matches!(vae.encode(&[0.0; 5]), Err(VaeError::InputDim { expected: 6, got: 5 })));

        zero_params(&vae);
        set_param(&vae, "vae.enc.mu.bias", &[0.3, -0.7]);
        set_param(&vae, "vae.enc.logvar.bias", &[-1.5, 0.25]);
        assert_eq!(vae.encode(&x).unwrap(), ([0.3, -0.7], [-1.5, 0.25]));
        assert_eq!(vae.decode(&[1.0, -2.0]).unwrap(), vec![0.5; 6]);
    }

    #[test]
    fn logvar_is_clamped() {
        let vae = Vae::new(3, 1).unwrap();
        zero_params(&vae);
        set_param(&vae, "vae.enc.logvar.bias", &[-40.0, 40.0]);
        assert_eq!(vae.encode(&[0.1, 0.2, 0.3]).unwrap().1, [-LOGVAR_BOUND, LOGVAR_BOUND]);
    }

    #[test]
    fn reparameterize_examples() {
        assert_eq!(reparameterize([1.0, 2.0], [0.0, 0.0], [0.5, -0.5]).z, [1.5, 1.5]);
        assert_eq!(reparameterize([0.0, 0.0], [0.0, 0.0], [0.3, -1.1]).z, [0.3, -1.1]);
        let c = reparameterize([0.4, -0.2], [f64::NEG_INFINITY; 2], [2.0, -3.0]);
        assert_eq!(c.z, c.mu);
        assert_eq!(c.eps, [2.0, -3.0]);
    }

    proptest! {
        #[test]
        fn reparameterization_identity(mu in prop::array::uniform2(-5.0f64..5.0),
                                      lv in prop::array::uniform2(-10.0f64..10.0),
                                      eps in prop::array::uniform2(-4.0f64..4.0)) {
            let c = reparameterize(mu, lv, eps);
            let s = c.sigma();
            for i in 0..LATENT_DIM {
                prop_assert!(s[i] > 0.0);
                prop_assert!((c.z[i] - (c.mu[i] + s[i] * c.eps[i])).abs() <= 1e-15 * (1.0 + c.z[i].abs()));
            }
        }

        #[test]
        fn decoder_output_is_in_open_unit_interval(z in prop::array::uniform2(-6.0f64..6.0)) {
            let vae = Vae::new(5, 9).unwrap();
            let y = vae.decode(&z).unwrap();
            prop_assert_eq!(y.len(), 5);
            prop_assert!(y.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn bce_floor_is_target_entropy() {
        // logits = logit(x) reproduce x exactly, leaving only the entropy of x
        let x = [0.2f64, 0.5, 0.9];
        let logits = Tensor::new(x.iter().map(|p| (p / (1.0 - p)).ln()).collect(), &[1, 3]).unwrap();
        let bce = bce_with_logits(&logits, &Tensor::new(x.to_vec(), &[1, 3]).unwrap()).unwrap().item();
        let entropy: f64 = x.iter().map(|p| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())).sum();
        assert!((bce - entropy).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_leaves_params_and_rejects_bad_targets() {
        let mut vae = Vae::new(4, 2).unwrap();
        let before = vae.store.checksum();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opt = AdamWConfig {
            lr: 0.0,
            ..Default::default()
        };
        let row = [0.1, 0.9, 0.5, 0.0];
        let l = vae.train_step(&[&row[..]], &opt, &mut rng).unwrap();
        assert!(l.total().is_finite() && l.kl >= 0.0);
        assert_eq!(vae.store.checksum(), before);
        let bad = [0.1, 1.2, 0.5, 0.0];
        assert!(matches!(vae.train_step(&[&bad[..]], &opt, &mut rng), Err(VaeError::TargetRange(v)) if v == 1.2));
    }

    fn noise_free_states() -> (Vec<Sample>, Vec<Vec<f64>>) {
        let cfg = CorpusConfig {
            noise_sd: 0.0,
            videos_per_task: 4,
            ..Default::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let set = curate_corpus(&corpus, 3, CurationMode::Pdpp).unwrap();
        let norm = Normalizer::fit(&set.samples).unwrap();
        let samples = norm.apply_all(&set.samples);
        let states = samples.iter().flat_map(|s| [s.start_state(), s.goal_state()]).collect();
        (samples, states)
    }

    #[test]
    fn training_lowers_loss_keeps_kl_non_negative_and_separates_tasks() {
        let (samples, states) = noise_free_states();
        let mut vae = Vae::new(states[0].len(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let opt = AdamWConfig::default();
        let first = vae.train_epoch(&states, 32, &opt, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..10 {
            last = vae.train_epoch(&states, 32, &opt, &mut rng).unwrap();
            assert!(last.kl >= 0.0);
        }
        assert!(last.total() < first.total(), "{first:?} -> {last:?}");

        assert!(matches!(vae.encode_constraints(&samples[0], true, 1), Err(VaeError::NotFrozen)));
        let before = vae.store.checksum();
        vae.freeze();
        assert!(matches!(vae.train_step(&[&states[0][..]], &opt, &mut rng), Err(VaeError::Frozen)));
        assert_eq!(vae.store.checksum(), before);

        // one representative per task; distinct tasks give distinct code pairs
        let mut reps: Vec<&Sample> = Vec::new();
        for s in &samples {
            if !reps.iter().any(|r| r.task == s.task) {
                reps.push(s);
            }
        }
        assert_eq!(reps.len(), 5);
        let codes: Vec<_> = reps.iter().map(|s| vae.encode_constraints(s, false, 0).unwrap()).collect();
        for i in 0..codes.len() {
            for j in i + 1..codes.len() {
                let d: f64 = codes[i]
                    .0
                    .z
                    .iter()
                    .chain(&codes[i].1.z)
                    .zip(codes[j].0.z.iter().chain(&codes[j].1.z))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!(d > 0.0, "tasks {i} and {j} collide");
            }
        }
    }

    #[test]
    fn constraint_encoding_contract() {
        let (samples, _) = noise_free_states();
        let mut vae = Vae::new(32, 4).unwrap();
        vae.freeze();
        let s = &samples[7];
        let (zs, zg) = vae.encode_constraints(s, false, 11).unwrap();
        assert_eq!(zs.z, zs.mu);
        assert_eq!(zg.z, zg.mu);
        assert_eq!(zs.eps, [0.0; 2]);
        let a = vae.encode_constraints(s, true, 11).unwrap();
        assert_eq!(a, vae.encode_constraints(s, true, 11).unwrap());
        assert_ne!(a, vae.encode_constraints(s, true, 12).unwrap());
        assert_eq!(a.0.mu, zs.mu);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_encoding_and_freeze_state() {
        let mut vae = Vae::new(7, 5).unwrap();
        vae.freeze();
        let ckpt = Checkpoint::from_bytes(&vae.to_checkpoint().to_bytes()).unwrap();
        let back = Vae::from_checkpoint(&ckpt).unwrap();
        assert!(back.is_frozen());
        assert_eq!(back.store.checksum(), vae.store.checksum());
        let x = [0.3; 7];
        assert_eq!(back.encode(&x).unwrap(), vae.encode(&x).unwrap());
        assert!(Vae::from_checkpoint(&Checkpoint::default()).is_err());
    }
}
