//! Temporal U-Net that predicts the clean plan state from a noised one.
//!
//! The time axis is never downsampled: horizons are 3 to 6 rows, so the
//! "deepest" level is the widest-channel block at full resolution. The
//! timestep embedding and the fused constraint code are both broadcast over
//! time and added to that block's input, before its convolution and
//! nonlinearity.
//!
//! ```text
//! x [B,T,D] -> conv,ln,gelu -> h1 [c1] -> conv,gelu -> h2 [c2]
//!   h2 + temb + z_c -> conv,gelu -> hb [c2]
//!   [hb | h2] -> conv,gelu -> d2 [c2]
//!   [d2 | h1] -> conv,gelu -> d1 [c1] -> conv -> x0_hat [B,T,D]
//! ```

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autodiff::nn::{Conv1d, Linear};
use crate::autodiff::{concat, Checkpoint, CheckpointError, ParamStore, Tensor, TensorError};
use crate::seed::{rng_for, TAG_INIT_DENOISER};
use crate::vae::{LatentCode, LATENT_DIM};

pub const FUSION_INPUT_DIM: usize = 4 * LATENT_DIM;
const ARCH_ENTRY: &str = "denoiser.arch";
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("timestep {n} outside 1..={num_steps}")]
    Timestep { n: usize, num_steps: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid architecture: {0}")]
    Arch(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserConfig {
    /// Row width `C + A + d_o`.
    pub state_dim: usize,
    pub num_steps: usize,
    pub channels: (usize, usize),
    pub time_dim: usize,
    pub kernel: usize,
    /// When false the fusion net is frozen and never used.
    pub inject: bool,
}

impl DenoiserConfig {
    pub fn new(state_dim: usize, num_steps: usize) -> Self {
        DenoiserConfig {
            state_dim,
            num_steps,
            channels: (64, 128),
            time_dim: 64,
            kernel: 3,
            inject: true,
        }
    }

    fn validate(&self) -> Result<(), DenoiserError> {
        let (c1, c2) = self.channels;
        if self.state_dim == 0 || self.num_steps == 0 || c1 == 0 || c2 == 0 {
            return Err(DenoiserError::Arch(format!("{self:?}")));
        }
        if self.kernel % 2 == 0 || self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(DenoiserError::Arch("kernel must be odd and time_dim even".into()));
        }
        Ok(())
    }

    fn to_meta(self) -> Vec<f64> {
        [
            self.state_dim,
            self.num_steps,
            self.channels.0,
            self.channels.1,
            self.time_dim,
            self.kernel,
            self.inject as usize,
        ]
        .iter()
        .map(|v| *v as f64)
        .collect()
    }

    fn from_meta(meta: &[f64]) -> Result<Self, CheckpointError> {
        let bad = || CheckpointError::MetaMismatch {
            name: ARCH_ENTRY.into(),
            detail: format!("{meta:?}"),
        };
        if meta.len() != 7 || meta.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(bad());
        }
        let u = |i: usize| meta[i] as usize;
        Ok(DenoiserConfig {
            state_dim: u(0),
            num_steps: u(1),
            channels: (u(2), u(3)),
            time_dim: u(4),
            kernel: u(5),
            inject: u(6) != 0,
        })
    }
}

/// Sinusoidal features `[sin(n f_i) | cos(n f_i)]`, `f_i = 10000^(-i / (dim/2))`.
pub fn timestep_embedding(n: usize, num_steps: usize, dim: usize) -> Result<Vec<f64>, DenoiserError> {
    if n == 0 || n > num_steps {
        return Err(DenoiserError::Timestep { n, num_steps });
    }
    let half = dim / 2;
    let freqs = (0..half).map(|i| (-(10_000f64).ln() * i as f64 / half as f64).exp());
    let (sin, cos): (Vec<f64>, Vec<f64>) = freqs.map(|f| ((n as f64 * f).sin(), (n as f64 * f).cos())).unzip();
    Ok([sin, cos].concat())
}

/// Fusion-net input `[z_s | ε_s | z_g | ε_g]`, reusing each code's own draw.
///
/// `use_eps = false` zeroes both noise slots.
pub fn fusion_input(zs: &LatentCode, zg: &LatentCode, use_eps: bool) -> [f64; FUSION_INPUT_DIM] {
    let zero = [0.0; LATENT_DIM];
    let (es, eg) = if use_eps { (zs.eps, zg.eps) } else { (zero, zero) };
    let mut out = [0.0; FUSION_INPUT_DIM];
    for (dst, src) in out.chunks_mut(LATENT_DIM).zip([zs.z, es, zg.z, eg]) {
        dst.copy_from_slice(&src);
    }
    out
}

/// Like [`fusion_input`] but with the noise slots drawn independently from `rng`.
pub fn fusion_input_fresh(zs: &LatentCode, zg: &LatentCode, rng: &mut impl Rng) -> [f64; FUSION_INPUT_DIM] {
    let mut out = fusion_input(zs, zg, true);
    for i in (LATENT_DIM..2 * LATENT_DIM).chain(3 * LATENT_DIM..4 * LATENT_DIM) {
        out[i] = rng.sample(StandardNormal);
    }
    out
}

#[derive(Debug)]
pub struct Denoiser {
    pub store: ParamStore,
    cfg: DenoiserConfig,
    conv_in: Conv1d,
    conv_down: Conv1d,
    conv_mid: Conv1d,
    conv_up2: Conv1d,
    conv_up1: Conv1d,
    conv_out: Conv1d,
    time_fc1: Linear,
    time_fc2: Linear,
    fusion: Linear,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig, seed: u64) -> Result<Denoiser, DenoiserError> {
        cfg.validate()?;
        let mut rng = rng_for(seed, &[TAG_INIT_DENOISER]);
        let mut s = ParamStore::new();
        let (c1, c2, d, k) = (cfg.channels.0, cfg.channels.1, cfg.state_dim, cfg.kernel);
        let conv_in = Conv1d::new(&mut s, "denoiser.enc1", d, c1, k, &mut rng)?;
        let conv_down = Conv1d::new(&mut s, "denoiser.enc2", c1, c2, k, &mut rng)?;
        let conv_mid = Conv1d::new(&mut s, "denoiser.mid", c2, c2, k, &mut rng)?;
        let conv_up2 = Conv1d::new(&mut s, "denoiser.dec2", 2 * c2, c2, k, &mut rng)?;
        let conv_up1 = Conv1d::new(&mut s, "denoiser.dec1", c2 + c1, c1, k, &mut rng)?;
        let conv_out = Conv1d::new(&mut s, "denoiser.out", c1, d, k, &mut rng)?;
        let time_fc1 = Linear::new(&mut s, "denoiser.time.fc1", cfg.time_dim, c2, &mut rng)?;
        let time_fc2 = Linear::new(&mut s, "denoiser.time.fc2", c2, c2, &mut rng)?;
        let fusion = Linear::new(&mut s, "denoiser.fusion", FUSION_INPUT_DIM, c2, &mut rng)?;
        if !cfg.inject {
            s.freeze_prefix("denoiser.fusion");
        }
        Ok(Denoiser {
            store: s,
            cfg,
            conv_in,
            conv_down,
            conv_mid,
            conv_up2,
            conv_up1,
            conv_out,
            time_fc1,
            time_fc2,
            fusion,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// `z_c = f(input)` for each row; `[B, 8] -> [B, c2]`.
    pub fn fuse_constraints(&self, inputs: &[[f64; FUSION_INPUT_DIM]]) -> Result<Tensor, DenoiserError> {
        if inputs.is_empty() {
            return Err(DenoiserError::Shape("no constraint inputs".into()));
        }
        let x = Tensor::new(inputs.iter().flatten().copied().collect(), &[inputs.len(), FUSION_INPUT_DIM])?;
        Ok(self.fusion.forward(&x)?)
    }

    /// Timestep MLP output, `[B, c2]`.
    fn time_features(&self, steps: &[usize]) -> Result<Tensor, DenoiserError> {
        let mut flat = Vec::with_capacity(steps.len() * self.cfg.time_dim);
        for &n in steps {
            flat.extend(timestep_embedding(n, self.cfg.num_steps, self.cfg.time_dim)?);
        }
        let e = Tensor::new(flat, &[steps.len(), self.cfg.time_dim])?;
        Ok(self.time_fc2.forward(&self.time_fc1.forward(&e)?.gelu()?)?)
    }

    /// Predicts `x̂₀` from `x_n`.
    ///
    /// `x` is `[T, D]` or `[B, T, D]`, `steps` has one entry per batch row and
    /// `z_c`, when given, is `[B, c2]`. `None` skips the injection entirely.
    pub fn forward(&self, x: &Tensor, steps: &[usize], z_c: Option<&Tensor>) -> Result<Tensor, DenoiserError> {
        let (b, t, d) = match x.shape() {
            [t, d] => (1, *t, *d),
            [b, t, d] => (*b, *t, *d),
            other => return Err(DenoiserError::Shape(format!("expected [B, T, D], got {other:?}"))),
        };
        if d != self.cfg.state_dim || t == 0 {
            return Err(DenoiserError::Shape(format!(
                "state width {d} (T = {t}), model expects {}",
                self.cfg.state_dim
            )));
        }
        if steps.len() != b {
            return Err(DenoiserError::Shape(format!("{} timesteps for batch of {b}", steps.len())));
        }
        let c2 = self.cfg.channels.1;
        let x3 = if x.rank() == 2 { x.reshape(&[1, t, d])? } else { x.clone() };

        let h1 = self.conv_in.forward(&x3)?.layer_norm(LN_EPS)?.gelu()?;
        let h2 = self.conv_down.forward(&h1)?.gelu()?;
        let mut mid = h2.add(&self.time_features(steps)?.reshape(&[b, 1, c2])?)?;
        if let Some(zc) = z_c {
            if zc.shape() != [b, c2] {
                return Err(DenoiserError::Shape(format!("z_c {:?}, expected [{b}, {c2}]", zc.shape())));
            }
            mid = mid.add(&zc.reshape(&[b, 1, c2])?)?;
        }
        let hb = self.conv_mid.forward(&mid)?.gelu()?;
        let d2 = self.conv_up2.forward(&concat(&[hb, h2], 2)?)?.gelu()?;
        let d1 = self.conv_up1.forward(&concat(&[d2, h1], 2)?)?.gelu()?;
        let out = self.conv_out.forward(&d1)?;
        Ok(if x.rank() == 2 { out.reshape(&[t, d])? } else { out })
    }

    /// Parameters plus a `denoiser.arch` entry describing the architecture.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.store.to_checkpoint();
        let meta = self.cfg.to_meta();
        ckpt.push(ARCH_ENTRY, vec![meta.len()], meta);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Denoiser, DenoiserError> {
        let entry = ckpt
            .get(ARCH_ENTRY)
            .ok_or_else(|| CheckpointError::MissingEntry(ARCH_ENTRY.into()))?;
        let cfg = DenoiserConfig::from_meta(&entry.data)?;
        let net = Denoiser::new(cfg, 0)?;
        net.store.load_checkpoint(ckpt)?;
        Ok(net)
    }
}
