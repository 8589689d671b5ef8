//! Differentiable primitives and their vector-Jacobian products.

use super::tensor::{numel, Tensor};
use super::TensorError;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) enum Op {
    Matmul,
    Conv1dSame,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Clamp { lo: f64, hi: f64 },
    Concat { axis: usize },
    Relu,
    Gelu,
    Sigmoid,
    Exp,
    Softmax,
    LayerNorm { eps: f64 },
    Mean,
    Sum,
    Reshape,
    Mse { weights: Option<Vec<f64>>, denom: f64 },
    BceWithLogits { rows: usize },
    CrossEntropy { labels: Vec<usize> },
    GaussianKl { rows: usize },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Matmul => "matmul",
            Op::Conv1dSame => "conv1d_same",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Clamp { .. } => "clamp",
            Op::Concat { .. } => "concat",
            Op::Relu => "relu",
            Op::Gelu => "gelu",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Softmax => "softmax_lastdim",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::Reshape => "reshape",
            Op::Mse { .. } => "mse",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::GaussianKl { .. } => "gaussian_kl_to_std_normal",
        }
    }

    /// Gradients for each parent given the upstream gradient `g` of `out`.
    pub(crate) fn backward(&self, parents: &[Tensor], out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        match self {
            Op::Matmul => matmul_backward(&parents[0], &parents[1], g),
            Op::Conv1dSame => conv1d_backward(&parents[0], &parents[1], g),
            Op::Add => {
                let (a, b) = (&parents[0], &parents[1]);
                vec![
                    Some(reduce_to(g, out.shape(), a.shape())),
                    Some(reduce_to(g, out.shape(), b.shape())),
                ]
            }
            Op::Sub => {
                let (a, b) = (&parents[0], &parents[1]);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                vec![
                    Some(reduce_to(g, out.shape(), a.shape())),
                    Some(reduce_to(&neg, out.shape(), b.shape())),
                ]
            }
            Op::Mul => mul_backward(&parents[0], &parents[1], out.shape(), g),
            Op::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
            Op::Clamp { lo, hi } => {
                let x = parents[0].data();
                vec![Some(x.iter().zip(g).map(|(x, g)| if *x > *lo && *x < *hi { *g } else { 0.0 }).collect())]
            }
            Op::Concat { axis } => concat_backward(parents, *axis, out.shape(), g),
            Op::Relu => {
                let x = parents[0].data();
                vec![Some(x.iter().zip(g).map(|(x, g)| if *x > 0.0 { *g } else { 0.0 }).collect())]
            }
            Op::Gelu => {
                let x = parents[0].data();
                vec![Some(x.iter().zip(g).map(|(x, g)| g * gelu_grad(*x)).collect())]
            }
            Op::Sigmoid => {
                let y = out.data();
                vec![Some(y.iter().zip(g).map(|(y, g)| g * y * (1.0 - y)).collect())]
            }
            Op::Exp => {
                let y = out.data();
                vec![Some(y.iter().zip(g).map(|(y, g)| g * y).collect())]
            }
            Op::Softmax => {
                let y = out.data();
                let n = *out.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![Some(dx)]
            }
            Op::LayerNorm { eps } => layer_norm_backward(&parents[0], *eps, g),
            Op::Mean => {
                let n = parents[0].numel() as f64;
                vec![Some(vec![g[0] / n; parents[0].numel()])]
            }
            Op::Sum => vec![Some(vec![g[0]; parents[0].numel()])],
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Mse { weights, denom } => {
                let p = parents[0].data();
                let t = parents[1].data();
                let scale = 2.0 * g[0] / denom;
                let dp: Vec<f64> = match weights {
                    Some(w) => p.iter().zip(t.iter()).zip(w).map(|((p, t), w)| scale * w * (p - t)).collect(),
                    None => p.iter().zip(t.iter()).map(|(p, t)| scale * (p - t)).collect(),
                };
                let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                vec![Some(dp), Some(dt)]
            }
            Op::BceWithLogits { rows } => {
                let l = parents[0].data();
                let t = parents[1].data();
                let scale = g[0] / *rows as f64;
                let dl = l.iter().zip(t.iter()).map(|(l, t)| scale * (sigmoid(*l) - t)).collect();
                let dt = l.iter().map(|l| -scale * l).collect();
                vec![Some(dl), Some(dt)]
            }
            Op::CrossEntropy { labels } => {
                let l = parents[0].data();
                let classes = parents[0].shape()[1];
                let scale = g[0] / labels.len() as f64;
                let mut dl = vec![0.0; l.len()];
                for (r, (row, &y)) in l.chunks(classes).zip(labels).enumerate() {
                    let p = softmax_row(row);
                    for j in 0..classes {
                        let target = if j == y { 1.0 } else { 0.0 };
                        dl[r * classes + j] = scale * (p[j] - target);
                    }
                }
                vec![Some(dl)]
            }
            Op::GaussianKl { rows } => {
                let mu = parents[0].data();
                let lv = parents[1].data();
                let scale = g[0] / *rows as f64;
                let dmu = mu.iter().map(|m| scale * m).collect();
                let dlv = lv.iter().map(|v| scale * 0.5 * (v.exp() - 1.0)).collect();
                vec![Some(dmu), Some(dlv)]
            }
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid { op, msg: msg.into() }
}

// ---------------------------------------------------------------------------
// Broadcasting (numpy rules, right-aligned).

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` laid against `out`, zero along broadcast axes.
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        let oi = i + rank - src.len();
        strides[oi] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    strides
}

/// Calls `f(out_index, src_index)` for each output element.
fn for_each_mapped(out: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total = numel(out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for o in 0..total {
        f(o, src);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out[d] {
                break;
            }
            src -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

fn expand(src: &[f64], src_shape: &[usize], out: &[usize]) -> Vec<f64> {
    if src_shape == out {
        return src.to_vec();
    }
    let strides = broadcast_strides(src_shape, out);
    let mut v = vec![0.0; numel(out)];
    for_each_mapped(out, &strides, |o, s| v[o] = src[s]);
    v
}

/// Sums a gradient of shape `out` back down to a broadcast source shape.
fn reduce_to(g: &[f64], out: &[usize], src_shape: &[usize]) -> Vec<f64> {
    if src_shape == out {
        return g.to_vec();
    }
    let strides = broadcast_strides(src_shape, out);
    let mut v = vec![0.0; numel(src_shape)];
    for_each_mapped(out, &strides, |o, s| v[s] += g[o]);
    v
}

fn binary(op: Op, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
    let name = op.name();
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| shape_err(name, a, b))?;
    let data = {
        let da = a.data();
        let db = b.data();
        if a.shape() == b.shape() {
            da.iter().zip(db.iter()).map(|(x, y)| f(*x, *y)).collect()
        } else {
            let ea = expand(&da, a.shape(), &out_shape);
            let eb = expand(&db, b.shape(), &out_shape);
            ea.iter().zip(&eb).map(|(x, y)| f(*x, *y)).collect()
        }
    };
    Tensor::from_op(op, vec![a.clone(), b.clone()], data, out_shape)
}

fn mul_backward(a: &Tensor, b: &Tensor, out: &[usize], g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let ea = expand(&a.data(), a.shape(), out);
    let eb = expand(&b.data(), b.shape(), out);
    let ga: Vec<f64> = g.iter().zip(&eb).map(|(g, y)| g * y).collect();
    let gb: Vec<f64> = g.iter().zip(&ea).map(|(g, x)| g * x).collect();
    vec![Some(reduce_to(&ga, out, a.shape())), Some(reduce_to(&gb, out, b.shape()))]
}

// ---------------------------------------------------------------------------
// Linear algebra.

fn matmul_backward(a: &Tensor, b: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let da = a.data();
    let db = b.data();
    let mut ga = vec![0.0; m * k];
    let mut gb = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &db[p * n..(p + 1) * n];
            ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            let av = da[i * k + p];
            if av != 0.0 {
                for (acc, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                    *acc += av * gv;
                }
            }
        }
    }
    vec![Some(ga), Some(gb)]
}

fn conv_dims(x: &Tensor) -> (usize, usize, usize) {
    match x.shape() {
        [t, c] => (1, *t, *c),
        [b, t, c] => (*b, *t, *c),
        _ => unreachable!("conv1d input rank checked at forward"),
    }
}

fn conv1d_backward(x: &Tensor, w: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (batch, steps, cin) = conv_dims(x);
    let (k, _, cout) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let half = (k / 2) as isize;
    let xd = x.data();
    let wd = w.data();
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    for b in 0..batch {
        for t in 0..steps {
            let grow = &g[(b * steps + t) * cout..(b * steps + t + 1) * cout];
            for kk in 0..k {
                let src = t as isize + kk as isize - half;
                if src < 0 || src >= steps as isize {
                    continue;
                }
                let xoff = (b * steps + src as usize) * cin;
                for i in 0..cin {
                    let woff = (kk * cin + i) * cout;
                    let wrow = &wd[woff..woff + cout];
                    gx[xoff + i] += grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                    let xv = xd[xoff + i];
                    if xv != 0.0 {
                        for (acc, gv) in gw[woff..woff + cout].iter_mut().zip(grow) {
                            *acc += xv * gv;
                        }
                    }
                }
            }
        }
    }
    vec![Some(gx), Some(gw)]
}

fn concat_backward(parents: &[Tensor], axis: usize, out: &[usize], g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let outer: usize = out[..axis].iter().product();
    let inner: usize = out[axis + 1..].iter().product();
    let total_axis = out[axis];
    let mut grads: Vec<Vec<f64>> = parents.iter().map(|p| vec![0.0; p.numel()]).collect();
    for o in 0..outer {
        let mut offset = 0;
        for (p, gp) in parents.iter().zip(grads.iter_mut()) {
            let len = p.shape()[axis] * inner;
            let src = (o * total_axis) * inner + offset;
            gp[o * len..(o + 1) * len].copy_from_slice(&g[src..src + len]);
            offset += len;
        }
    }
    grads.into_iter().map(Some).collect()
}

fn layer_norm_backward(x: &Tensor, eps: f64, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let n = *x.shape().last().unwrap_or(&1);
    let xd = x.data();
    let mut dx = vec![0.0; xd.len()];
    for ((xr, gr), dr) in xd.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
        let (mean, inv) = row_stats(xr, eps);
        let y: Vec<f64> = xr.iter().map(|v| (v - mean) * inv).collect();
        let sum_g: f64 = gr.iter().sum();
        let sum_gy: f64 = gr.iter().zip(&y).map(|(a, b)| a * b).sum();
        let nf = n as f64;
        for j in 0..n {
            dr[j] = inv / nf * (nf * gr[j] - sum_g - y[j] * sum_gy);
        }
    }
    vec![Some(dx)]
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn unary(op: Op, x: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor, TensorError> {
    let data = x.data().iter().map(|v| f(*v)).collect();
    Tensor::from_op(op, vec![x.clone()], data, x.shape().to_vec())
}

// ---------------------------------------------------------------------------
// Public forward API.

impl Tensor {
    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        let (&[m, k], &[k2, n]) = (self.shape(), rhs.shape()) else {
            return Err(shape_err("matmul", self, rhs));
        };
        if k != k2 {
            return Err(shape_err("matmul", self, rhs));
        }
        let data = {
            let a = self.data();
            let b = rhs.data();
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                        *o += av * bv;
                    }
                }
            }
            out
        };
        Tensor::from_op(Op::Matmul, vec![self.clone(), rhs.clone()], data, vec![m, n])
    }

    /// Zero-padded, stride-1 temporal convolution.
    ///
    /// `self` is `[T, Cin]` or `[B, T, Cin]`, `kernel` is `[K, Cin, Cout]` with odd `K`;
    /// the time axis keeps its length.
    pub fn conv1d_same(&self, kernel: &Tensor) -> Result<Tensor, TensorError> {
        let (batch, steps, cin) = match self.shape() {
            [t, c] => (1, *t, *c),
            [b, t, c] => (*b, *t, *c),
            _ => return Err(shape_err("conv1d_same", self, kernel)),
        };
        let &[k, kin, cout] = kernel.shape() else {
            return Err(shape_err("conv1d_same", self, kernel));
        };
        if kin != cin {
            return Err(shape_err("conv1d_same", self, kernel));
        }
        if k % 2 == 0 {
            return Err(invalid("conv1d_same", format!("kernel size {k} is even")));
        }
        let half = (k / 2) as isize;
        let data = {
            let x = self.data();
            let w = kernel.data();
            let mut out = vec![0.0; batch * steps * cout];
            for b in 0..batch {
                for t in 0..steps {
                    let ooff = (b * steps + t) * cout;
                    for kk in 0..k {
                        let src = t as isize + kk as isize - half;
                        if src < 0 || src >= steps as isize {
                            continue;
                        }
                        let xoff = (b * steps + src as usize) * cin;
                        for i in 0..cin {
                            let xv = x[xoff + i];
                            if xv == 0.0 {
                                continue;
                            }
                            let woff = (kk * cin + i) * cout;
                            for (o, wv) in out[ooff..ooff + cout].iter_mut().zip(&w[woff..woff + cout]) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
            }
            out
        };
        let mut shape = self.shape().to_vec();
        *shape.last_mut().expect("rank checked") = cout;
        Tensor::from_op(Op::Conv1dSame, vec![self.clone(), kernel.clone()], data, shape)
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        binary(Op::Add, self, rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        binary(Op::Sub, self, rhs, |a, b| a - b)
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        binary(Op::Mul, self, rhs, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor, TensorError> {
        unary(Op::Scale(c), self, |v| v * c)
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero where the bound is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor, TensorError> {
        if !(lo < hi) {
            return Err(invalid("clamp", "need lo < hi"));
        }
        unary(Op::Clamp { lo, hi }, self, |v| v.clamp(lo, hi))
    }

    pub fn relu(&self) -> Result<Tensor, TensorError> {
        unary(Op::Relu, self, |v| v.max(0.0))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Result<Tensor, TensorError> {
        unary(Op::Gelu, self, gelu)
    }

    pub fn sigmoid(&self) -> Result<Tensor, TensorError> {
        unary(Op::Sigmoid, self, sigmoid)
    }

    pub fn exp(&self) -> Result<Tensor, TensorError> {
        unary(Op::Exp, self, f64::exp)
    }

    pub fn softmax_lastdim(&self) -> Result<Tensor, TensorError> {
        let n = *self.shape().last().unwrap_or(&1);
        let data = self.data().chunks(n).flat_map(softmax_row).collect();
        Tensor::from_op(Op::Softmax, vec![self.clone()], data, self.shape().to_vec())
    }

    /// Normalizes each row of the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor, TensorError> {
        if eps <= 0.0 {
            return Err(invalid("layer_norm", "eps must be positive"));
        }
        let n = *self.shape().last().unwrap_or(&1);
        let data = self
            .data()
            .chunks(n)
            .flat_map(|row| {
                let (mean, inv) = row_stats(row, eps);
                row.iter().map(move |v| (v - mean) * inv).collect::<Vec<_>>()
            })
            .collect();
        Tensor::from_op(Op::LayerNorm { eps }, vec![self.clone()], data, self.shape().to_vec())
    }

    /// Mean over all elements, as a scalar.
    pub fn mean(&self) -> Result<Tensor, TensorError> {
        let v = self.data().iter().sum::<f64>() / self.numel() as f64;
        Tensor::from_op(Op::Mean, vec![self.clone()], vec![v], Vec::new())
    }

    /// Sum over all elements, as a scalar.
    pub fn sum(&self) -> Result<Tensor, TensorError> {
        let v = self.data().iter().sum::<f64>();
        Tensor::from_op(Op::Sum, vec![self.clone()], vec![v], Vec::new())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Tensor::from_op(Op::Reshape, vec![self.clone()], self.to_vec(), shape.to_vec())
    }
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor, TensorError> {
    let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(invalid("concat", format!("axis {axis} out of range for rank {rank}")));
    }
    for p in &parts[1..] {
        let ok = p.rank() == rank
            && p.shape().iter().zip(first.shape()).enumerate().all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(shape_err("concat", first, p));
        }
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(numel(&out_shape));
    let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
    for o in 0..outer {
        for (p, d) in parts.iter().zip(&guards) {
            let len = p.shape()[axis] * inner;
            data.extend_from_slice(&d[o * len..(o + 1) * len]);
        }
    }
    drop(guards);
    Tensor::from_op(Op::Concat { axis }, parts.to_vec(), data, out_shape)
}

// ---------------------------------------------------------------------------
// Losses.

fn rows_of(t: &Tensor) -> usize {
    if t.rank() >= 2 {
        t.shape()[0]
    } else {
        1
    }
}

/// Mean squared error over all elements.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor, TensorError> {
    if pred.shape() != target.shape() {
        return Err(shape_err("mse", pred, target));
    }
    let v = {
        let p = pred.data();
        let t = target.data();
        p.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
    };
    let denom = pred.numel() as f64;
    Tensor::from_op(Op::Mse { weights: None, denom }, vec![pred.clone(), target.clone()], vec![v], Vec::new())
}

/// Weighted squared error normalized by the total weight; zero weights mask entries out.
pub fn mse_masked(pred: &Tensor, target: &Tensor, weights: &[f64]) -> Result<Tensor, TensorError> {
    if pred.shape() != target.shape() {
        return Err(shape_err("mse", pred, target));
    }
    if weights.len() != pred.numel() {
        return Err(invalid("mse", format!("{} weights for {} elements", weights.len(), pred.numel())));
    }
    let denom: f64 = weights.iter().sum();
    if denom <= 0.0 {
        return Err(invalid("mse", "mask selects no elements"));
    }
    let v = {
        let p = pred.data();
        let t = target.data();
        p.iter().zip(t.iter()).zip(weights).map(|((a, b), w)| w * (a - b) * (a - b)).sum::<f64>() / denom
    };
    let op = Op::Mse { weights: Some(weights.to_vec()), denom };
    Tensor::from_op(op, vec![pred.clone(), target.clone()], vec![v], Vec::new())
}

/// Binary cross-entropy on logits, summed over features and averaged over rows.
///
/// Targets must lie in `[0, 1]`.
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<Tensor, TensorError> {
    if logits.shape() != target.shape() {
        return Err(shape_err("bce_with_logits", logits, target));
    }
    let rows = rows_of(logits);
    let v = {
        let l = logits.data();
        let t = target.data();
        if let Some(bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid("bce_with_logits", format!("target {bad} outside [0, 1]")));
        }
        l.iter()
            .zip(t.iter())
            .map(|(l, t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p())
            .sum::<f64>()
            / rows as f64
    };
    let op = Op::BceWithLogits { rows };
    Tensor::from_op(op, vec![logits.clone(), target.clone()], vec![v], Vec::new())
}

/// Softmax cross-entropy of `[B, C]` logits against integer labels, batch mean.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor, TensorError> {
    let &[rows, classes] = logits.shape() else {
        return Err(invalid("cross_entropy", format!("logits must be [B, C], got {:?}", logits.shape())));
    };
    if labels.len() != rows {
        return Err(invalid("cross_entropy", format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
        return Err(TensorError::LabelOutOfRange { label, classes });
    }
    let v = {
        let l = logits.data();
        l.chunks(classes)
            .zip(labels)
            .map(|(row, &y)| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - row[y]
            })
            .sum::<f64>()
            / rows as f64
    };
    let op = Op::CrossEntropy { labels: labels.to_vec() };
    Tensor::from_op(op, vec![logits.clone()], vec![v], Vec::new())
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over latent dims and averaged over rows.
pub fn gaussian_kl_to_std_normal(mu: &Tensor, logvar: &Tensor) -> Result<Tensor, TensorError> {
    if mu.shape() != logvar.shape() {
        return Err(shape_err("gaussian_kl_to_std_normal", mu, logvar));
    }
    let rows = rows_of(mu);
    let v = {
        let m = mu.data();
        let lv = logvar.data();
        m.iter()
            .zip(lv.iter())
            .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
            .sum::<f64>()
            / rows as f64
    };
    let op = Op::GaussianKl { rows };
    Tensor::from_op(op, vec![mu.clone(), logvar.clone()], vec![v], Vec::new())
}
