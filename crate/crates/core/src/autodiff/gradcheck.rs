use super::{no_grad, ParamStore, Tensor, TensorError};

fn check_eps(eps: f64) -> Result<(), TensorError> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(TensorError::GradCheck(format!("eps {eps} outside (0, 1e-2]")));
    }
    Ok(())
}

fn scalar_value(t: &Tensor) -> Result<f64, TensorError> {
    if t.numel() != 1 {
        return Err(TensorError::NonScalarLoss(t.shape().to_vec()));
    }
    Ok(t.item())
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares `backward()` against central finite differences at `point`.
///
/// Returns `max |a - n| / max(1, |a|)` over all coordinates.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&Tensor) -> Result<Tensor, TensorError>,
{
    check_eps(eps)?;
    let base = point.to_vec();
    let shape = point.shape().to_vec();

    let x = Tensor::param(base.clone(), &shape)?;
    let loss = f(&x)?;
    scalar_value(&loss)?;
    loss.backward()?;
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; base.len()]);

    let _guard = no_grad();
    let eval = |data: Vec<f64>| -> Result<f64, TensorError> { scalar_value(&f(&Tensor::new(data, &shape)?)?) };
    let first = eval(base.clone())?;
    let second = eval(base.clone())?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::GradCheck("function is not deterministic".into()));
    }

    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Finite-difference check of a closure's gradient with respect to the
/// parameters in `store` (perturbed in place, then restored).
///
/// `stride` > 1 probes every `stride`-th coordinate of each parameter.
pub fn grad_check_store<F>(store: &ParamStore, f: F, eps: f64, stride: usize) -> Result<f64, TensorError>
where
    F: Fn() -> Result<Tensor, TensorError>,
{
    check_eps(eps)?;
    let stride = stride.max(1);
    store.zero_grads();
    let loss = f()?;
    scalar_value(&loss)?;
    loss.backward()?;

    let _guard = no_grad();
    let first = scalar_value(&f()?)?;
    let second = scalar_value(&f()?)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::GradCheck("function is not deterministic".into()));
    }

    let mut worst = 0.0f64;
    for (_, t) in store.iter().filter(|(_, t)| t.requires_grad()) {
        let analytic = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
        for i in (0..t.numel()).step_by(stride) {
            let orig = t.data()[i];
            t.update_data(|d| d[i] = orig + eps);
            let up = f().and_then(|l| scalar_value(&l));
            t.update_data(|d| d[i] = orig - eps);
            let down = f().and_then(|l| scalar_value(&l));
            t.update_data(|d| d[i] = orig);
            let numeric = (up? - down?) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    store.zero_grads();
    Ok(worst)
}
