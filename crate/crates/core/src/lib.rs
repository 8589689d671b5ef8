pub mod autodiff;
pub mod dataset;
pub mod kv;
pub mod seed;
pub mod vae;
pub mod denoiser;
pub mod diffusion;
pub mod classifier;
pub mod metrics;
pub mod pipeline;
