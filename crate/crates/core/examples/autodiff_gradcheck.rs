//! Finite-difference check of hand-derived gradients.
//!
//! Builds a small two-layer network with the autodiff engine, checks the
//! gradient of an MSE loss against central differences and then takes a few
//! AdamW steps on the same loss.

use latent_plan::autodiff::nn::Linear;
use latent_plan::autodiff::{grad_check, grad_check_store, mse, AdamWConfig, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::new((0..12).map(|i| (i as f64 * 0.37).sin()).collect(), &[4, 3])?;
    let err = grad_check(|t| t.matmul(&t.reshape(&[3, 4])?)?.gelu()?.layer_norm(1e-5)?.sum(), &x, 1e-6)?;
    println!("input gradient of sum(layer_norm(gelu(x x^T))): max rel err {err:.2e}");

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let l1 = Linear::new(&mut store, "demo.l1", 3, 8, &mut rng)?;
    let l2 = Linear::new(&mut store, "demo.l2", 8, 2, &mut rng)?;
    let target = Tensor::new(vec![0.5, -0.5, 1.0, 0.0, -1.0, 0.25, 0.0, 0.75], &[4, 2])?;
    let loss = || mse(&l2.forward(&l1.forward(&x)?.gelu()?)?, &target);
    let err = grad_check_store(&store, loss, 1e-6, 1)?;
    println!("parameter gradients of a 3-8-2 MLP: max rel err {err:.2e}");

    let opt = AdamWConfig { lr: 1e-2, ..Default::default() };
    for step in 0..=100 {
        store.zero_grads();
        let l = loss()?;
        l.backward()?;
        store.adamw_step(&opt)?;
        if step % 25 == 0 {
            println!("step {step:>3}  loss {:.5}", l.item());
        }
    }
    Ok(())
}
