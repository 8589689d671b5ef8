use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(data: &[f64], shape: &[usize]) -> Tensor {
    Tensor::new(data.to_vec(), shape).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // keep clear of the relu kink at zero
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(data, shape).unwrap()
}

#[test]
fn matmul_hand_product() {
    let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
    let b = t(&[1.0, 1.0], &[2, 1]);
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.shape(), &[2, 1]);
    assert_eq!(c.to_vec(), vec![3.0, 7.0]);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let y = t(&[0.0, 0.0, 0.0], &[3]).softmax_lastdim().unwrap();
    for v in y.to_vec() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn add_zeros_is_identity() {
    let x = t(&[1.5, -2.0, 0.25, 8.0], &[2, 2]);
    let y = x.add(&Tensor::zeros_like(&x)).unwrap();
    assert_eq!(x.to_vec(), y.to_vec());
}

#[test]
fn shape_errors_are_structured() {
    let a = t(&[1.0; 6], &[2, 3]);
    let b = t(&[1.0; 6], &[2, 3]);
    assert!(matches!(a.matmul(&b), Err(TensorError::Shape { op: "matmul", .. })));
    assert!(matches!(concat(&[a.clone(), t(&[1.0; 4], &[4])], 0), Err(TensorError::Shape { .. })));
    let k = t(&[1.0; 2 * 3 * 4], &[2, 3, 4]);
    assert!(matches!(a.conv1d_same(&k), Err(TensorError::Invalid { .. })));
}

#[test]
fn non_finite_output_names_the_op() {
    let x = t(&[1000.0], &[1]);
    assert_eq!(x.exp().unwrap_err(), TensorError::NonFinite { op: "exp" });
}

#[test]
fn loss_closed_forms() {
    let x = t(&[0.3, -1.2, 4.0], &[3]);
    assert_eq!(mse(&x, &x).unwrap().item(), 0.0);

    let kl = gaussian_kl_to_std_normal(&t(&[2.0], &[1, 1]), &t(&[0.0], &[1, 1])).unwrap();
    assert!((kl.item() - 2.0).abs() < 1e-15);

    let ce = cross_entropy(&t(&[0.7; 4], &[1, 4]), &[2]).unwrap();
    assert!((ce.item() - 4f64.ln()).abs() < 1e-12);
    assert!((ce.item() - 1.3863).abs() < 1e-4);

    assert!(matches!(
        cross_entropy(&t(&[0.0; 4], &[1, 4]), &[4]),
        Err(TensorError::LabelOutOfRange { label: 4, classes: 4 })
    ));
}

#[test]
fn bce_floor_is_target_entropy() {
    // logits = logit(x) reproduce x exactly; BCE then equals the Bernoulli entropy of x.
    let x = [0.2, 0.5, 0.9];
    let logits: Vec<f64> = x.iter().map(|p: &f64| (p / (1.0 - p)).ln()).collect();
    let l = bce_with_logits(&t(&logits, &[1, 3]), &t(&x, &[1, 3])).unwrap();
    let entropy: f64 = x.iter().map(|p| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())).sum();
    assert!((l.item() - entropy).abs() < 1e-12);
}

#[test]
fn backward_square() {
    let x = Tensor::param(vec![3.0], &[1]).unwrap();
    x.mul(&x).unwrap().sum().unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![6.0]);
}

#[test]
fn backward_linear_mse_matches_normal_equation_gradient() {
    let xs = [[1.0, 2.0], [0.5, -1.0], [3.0, 0.0], [-2.0, 1.5]];
    let ys = [1.0, -0.5, 2.0, 0.25];
    let w0 = [0.4, -0.3];
    // oracle: d/dw mean((Xw - y)^2) = (2/n) X^T (Xw - y)
    let n = xs.len() as f64;
    let mut expected = [0.0; 2];
    for (row, y) in xs.iter().zip(ys) {
        let r = row[0] * w0[0] + row[1] * w0[1] - y;
        expected[0] += 2.0 / n * row[0] * r;
        expected[1] += 2.0 / n * row[1] * r;
    }
    let x = t(&xs.concat(), &[4, 2]);
    let w = Tensor::param(w0.to_vec(), &[2, 1]).unwrap();
    let loss = mse(&x.matmul(&w).unwrap(), &t(&ys, &[4, 1])).unwrap();
    loss.backward().unwrap();
    let g = w.grad().unwrap();
    for i in 0..2 {
        assert!((g[i] - expected[i]).abs() < 1e-14, "{g:?} vs {expected:?}");
    }
}

#[test]
fn constant_loss_gives_zero_grads() {
    let x = Tensor::param(vec![1.0, -2.0, 5.0], &[3]).unwrap();
    x.mul(&Tensor::zeros(&[3])).unwrap().sum().unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0; 3]);
}

#[test]
fn backward_accumulates_until_zeroed() {
    let x = Tensor::param(vec![2.0], &[1]).unwrap();
    for _ in 0..2 {
        x.mul(&x).unwrap().sum().unwrap().backward().unwrap();
    }
    assert_eq!(x.grad().unwrap(), vec![8.0]);
    x.zero_grad();
    assert!(x.grad().is_none());
}

#[test]
fn backward_preconditions() {
    let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
    assert!(matches!(x.scale(2.0).unwrap().backward(), Err(TensorError::NonScalarLoss(_))));
    assert_eq!(Tensor::scalar(1.0).backward(), Err(TensorError::Detached));
}

#[test]
fn no_grad_skips_recording() {
    let x = Tensor::param(vec![1.0], &[1]).unwrap();
    let y = {
        let _g = no_grad();
        x.scale(3.0).unwrap()
    };
    assert!(!y.requires_grad());
    assert!(x.scale(3.0).unwrap().requires_grad());
}

#[test]
fn adamw_zero_grad_no_decay_is_noop() {
    let mut store = ParamStore::new();
    let p = store.insert("w", vec![0.5, -1.0], &[2]).unwrap();
    p.mul(&Tensor::zeros(&[2])).unwrap().sum().unwrap().backward().unwrap();
    store.adamw_step(&AdamWConfig { lr: 0.1, ..Default::default() }).unwrap();
    assert_eq!(p.to_vec(), vec![0.5, -1.0]);
    assert_eq!(store.step_count(), 1);
}

#[test]
fn adamw_first_step_hand_value() {
    // After one step the bias-corrected moments are g and g^2, so the step is lr * g / (|g| + eps).
    let (lr, g, p0, eps) = (0.01, 0.3, 1.0, 1e-8);
    let mut store = ParamStore::new();
    let p = store.insert("w", vec![p0], &[1]).unwrap();
    p.scale(g).unwrap().sum().unwrap().backward().unwrap();
    store.adamw_step(&AdamWConfig { lr, eps, ..Default::default() }).unwrap();
    let expected = p0 - lr * g / (g.abs() + eps);
    assert!((p.item() - expected).abs() < 1e-15);
    assert_eq!(p.grad().unwrap(), vec![g], "optimizer must leave grads untouched");
}

#[test]
fn adamw_decoupled_decay_with_zero_grad() {
    let (lr, wd, p0) = (0.1, 0.01, 2.0);
    let mut store = ParamStore::new();
    let p = store.insert("w", vec![p0], &[1]).unwrap();
    p.mul(&Tensor::zeros(&[1])).unwrap().sum().unwrap().backward().unwrap();
    store.adamw_step(&AdamWConfig { lr, weight_decay: wd, ..Default::default() }).unwrap();
    assert!((p.item() - (p0 - lr * wd * p0)).abs() < 1e-15);
}

#[test]
fn adamw_missing_grad_names_param() {
    let mut store = ParamStore::new();
    store.insert("layer.bias", vec![0.0], &[1]).unwrap();
    assert_eq!(
        store.adamw_step(&AdamWConfig::default()),
        Err(TensorError::MissingGrad("layer.bias".into()))
    );
}

#[test]
fn adamw_is_bit_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let w = store.insert("w", (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(), &[3, 2]).unwrap();
        let x = random(&mut rng, &[4, 3]);
        for _ in 0..5 {
            store.zero_grads();
            x.matmul(&w).unwrap().gelu().unwrap().mean().unwrap().backward().unwrap();
            store.adamw_step(&AdamWConfig { weight_decay: 0.01, ..Default::default() }).unwrap();
        }
        w.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn grad_check_examples() {
    let x = t(&[0.3, -1.7, 2.2], &[3]);
    let err = grad_check(|x| x.mul(x)?.sum(), &x, 1e-5).unwrap();
    assert!(err < 1e-8, "{err}");

    let logits = t(&[0.2, -0.4, 1.1, 0.0, 0.5, -0.9], &[2, 3]);
    let err = grad_check(|l| cross_entropy(&l.softmax_lastdim()?, &[1, 2]), &logits, 1e-6).unwrap();
    assert!(err < 1e-5, "{err}");

    assert!(matches!(grad_check(|x| x.sum(), &x, 0.0), Err(TensorError::GradCheck(_))));
    assert!(matches!(grad_check(|x| x.sum(), &x, 0.1), Err(TensorError::GradCheck(_))));
}

type Probe = Box<dyn Fn(&Tensor) -> Result<Tensor, TensorError>>;

/// Every primitive and loss, each wrapped into a scalar function of one random input.
fn probes(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<usize>, Probe)> {
    let w = random(rng, &[3, 4]);
    let k = random(rng, &[3, 3, 2]);
    let other = random(rng, &[2, 3]);
    let bias = random(rng, &[3]);
    let mix = random(rng, &[2, 3]);
    let target01 = Tensor::new((0..6).map(|_| rng.random_range(0.0..1.0)).collect(), &[2, 3]).unwrap();
    let m2 = mix.clone();
    let m3 = mix.clone();
    let m4 = mix.clone();
    let m5 = mix.clone();
    let m6 = mix.clone();
    let m7 = mix.clone();
    let m8 = mix.clone();
    let o2 = other.clone();
    let mask = vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    vec![
        ("matmul", vec![2, 3], Box::new(move |x: &Tensor| x.matmul(&w)?.mul(&x.matmul(&w)?)?.sum())),
        ("conv1d_same", vec![2, 4, 3], Box::new(move |x: &Tensor| x.conv1d_same(&k)?.gelu()?.sum())),
        ("add", vec![2, 3], Box::new(move |x: &Tensor| x.add(&bias)?.mul(&mix)?.sum())),
        ("sub", vec![2, 3], Box::new(move |x: &Tensor| other.sub(x)?.mul(&m2)?.sum())),
        ("mul", vec![2, 3], Box::new(move |x: &Tensor| x.mul(x)?.mul(&m3)?.sum())),
        ("concat", vec![2, 3], Box::new(move |x: &Tensor| concat(&[x.clone(), o2.clone(), x.clone()], 1)?.gelu()?.sum())),
        ("clamp", vec![2, 3], Box::new(|x: &Tensor| x.clamp(-2.0, 0.0)?.gelu()?.sum())),
        ("relu", vec![2, 3], Box::new(move |x: &Tensor| x.relu()?.mul(&m4)?.sum())),
        ("gelu", vec![2, 3], Box::new(move |x: &Tensor| x.gelu()?.mul(&m5)?.sum())),
        ("sigmoid", vec![2, 3], Box::new(move |x: &Tensor| x.sigmoid()?.mul(&m6)?.sum())),
        ("exp", vec![2, 3], Box::new(|x: &Tensor| x.scale(0.5)?.exp()?.sum())),
        ("softmax_lastdim", vec![2, 3], Box::new(move |x: &Tensor| x.softmax_lastdim()?.mul(&m7)?.sum())),
        ("layer_norm", vec![2, 3], Box::new(move |x: &Tensor| x.layer_norm(1e-5)?.mul(&m8)?.sum())),
        ("mean", vec![2, 3], Box::new(|x: &Tensor| x.mul(x)?.mean())),
        ("reshape", vec![2, 3], Box::new(|x: &Tensor| x.reshape(&[3, 2])?.gelu()?.sum())),
        ("mse", vec![2, 3], Box::new(|x: &Tensor| mse(&x.gelu()?, &Tensor::zeros(&[2, 3])))),
        ("mse_masked", vec![2, 3], Box::new(move |x: &Tensor| mse_masked(&x.gelu()?, &Tensor::zeros(&[2, 3]), &mask))),
        ("bce_with_logits", vec![2, 3], Box::new(move |x: &Tensor| bce_with_logits(x, &target01))),
        ("cross_entropy", vec![2, 3], Box::new(|x: &Tensor| cross_entropy(x, &[0, 2]))),
        ("gaussian_kl_mu", vec![2, 3], Box::new(|x: &Tensor| gaussian_kl_to_std_normal(x, &x.scale(0.3)?))),
        ("gaussian_kl_logvar", vec![2, 3], Box::new(|x: &Tensor| gaussian_kl_to_std_normal(&Tensor::zeros(&[2, 3]), x))),
    ]
}

#[test]
fn every_primitive_and_loss_passes_grad_check_on_20_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..20 {
        for (name, shape, f) in probes(&mut rng) {
            let x = random(&mut rng, &shape);
            let err = grad_check(&f, &x, 1e-6).unwrap();
            assert!(err < 1e-5, "{name} trial {trial}: relative error {err}");
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-30.0f64..30.0, 12)) {
        let y = Tensor::new(values, &[3, 4]).unwrap().softmax_lastdim().unwrap().to_vec();
        for row in y.chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn gaussian_kl_is_non_negative(mu in prop::collection::vec(-5.0f64..5.0, 4), lv in prop::collection::vec(-8.0f64..8.0, 4)) {
        let kl = gaussian_kl_to_std_normal(&Tensor::new(mu.clone(), &[2, 2]).unwrap(), &Tensor::new(lv.clone(), &[2, 2]).unwrap()).unwrap().item();
        prop_assert!(kl >= 0.0);
        let at_prior = mu.iter().all(|m| *m == 0.0) && lv.iter().all(|v| *v == 0.0);
        if !at_prior {
            prop_assert!(kl > 0.0);
        }
    }
}

#[test]
fn clamp_bounds_values_and_blocks_gradient_outside() {
    let x = Tensor::param(vec![-12.0, 0.5, 11.0], &[3]).unwrap();
    let y = x.clamp(-10.0, 10.0).unwrap();
    assert_eq!(y.to_vec(), vec![-10.0, 0.5, 10.0]);
    y.sum().unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    assert!(x.clamp(1.0, 1.0).is_err());
}

#[test]
fn gaussian_kl_vanishes_at_prior() {
    let kl = gaussian_kl_to_std_normal(&Tensor::zeros(&[3, 2]), &Tensor::zeros(&[3, 2])).unwrap();
    assert_eq!(kl.item(), 0.0);
}

#[test]
fn store_checkpoint_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut a = ParamStore::new();
    nn::Linear::new(&mut a, "vae.fc", 3, 4, &mut rng).unwrap();
    let mut b = ParamStore::new();
    nn::Linear::new(&mut b, "vae.fc", 3, 4, &mut rng).unwrap();
    assert_ne!(a.checksum(), b.checksum());
    let ckpt = Checkpoint::from_bytes(&a.to_checkpoint().to_bytes()).unwrap();
    b.load_checkpoint(&ckpt).unwrap();
    assert_eq!(a.checksum(), b.checksum());

    let mut c = ParamStore::new();
    nn::Linear::new(&mut c, "vae.fc", 3, 5, &mut rng).unwrap();
    assert!(matches!(c.load_checkpoint(&ckpt), Err(CheckpointError::ShapeMismatch { .. })));
}
