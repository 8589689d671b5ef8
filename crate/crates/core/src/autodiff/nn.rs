//! Layer building blocks registered into a [`ParamStore`].

use rand::Rng;

use super::{ParamStore, Tensor, TensorError};

fn uniform_init(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Fully connected layer, `y = x W + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        let weight = store.insert(format!("{name}.weight"), uniform_init(rng, input * output, input), &[input, output])?;
        let bias = store.insert(format!("{name}.bias"), uniform_init(rng, output, input), &[output])?;
        Ok(Self { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Accepts any rank >= 1 whose last extent is `in_features`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let shape = x.shape();
        let last = *shape.last().unwrap_or(&1);
        if last != self.in_features() {
            return Err(TensorError::Shape {
                op: "linear",
                lhs: shape.to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        let rows = x.numel() / last;
        let flat = if shape.len() == 2 { x.clone() } else { x.reshape(&[rows, last])? };
        let y = flat.matmul(&self.weight)?.add(&self.bias)?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().expect("rank >= 1") = self.out_features();
        y.reshape(&out_shape)
    }
}

/// Zero-padded temporal convolution with bias over `[B, T, C]` inputs.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        let fan_in = input * kernel;
        let weight = store.insert(
            format!("{name}.weight"),
            uniform_init(rng, kernel * input * output, fan_in),
            &[kernel, input, output],
        )?;
        let bias = store.insert(format!("{name}.bias"), uniform_init(rng, output, fan_in), &[output])?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.conv1d_same(&self.weight)?.add(&self.bias)
    }
}
