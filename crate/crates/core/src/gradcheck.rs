//! Central finite-difference checks of the analytic backward pass.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::rng::{self, Purpose};
use crate::split::{client_backward, client_forward, server_forward_backward};
use crate::{Error, LayerSpec, LayeredModel, Loss, ModelSpec, Result, Tensor};

pub const FD_STEP: f64 = 1e-6;
pub const MAX_CHECK_PARAMS: usize = 10_000;

/// `|a − f| / max(|a|, |f|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn derivative(mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    Ok((f(FD_STEP)? - f(-FD_STEP)?) / (2.0 * FD_STEP))
}

fn loss_at(model: &mut LayeredModel, x: &Tensor, labels: &[usize], loss: Loss) -> Result<f64> {
    let logits = model.forward(x.clone())?;
    model.clear_caches();
    Ok(loss.evaluate(&logits, labels)?.0)
}

fn analytic(model: &mut LayeredModel, x: &Tensor, labels: &[usize], loss: Loss) -> Result<(Vec<f64>, Tensor)> {
    let logits = model.forward(x.clone())?;
    let (_, g) = loss.evaluate(&logits, labels)?;
    let (grads, gin) = model.backward(g)?;
    let flat = grads.iter().flat_map(|t| t.data().iter().copied()).collect();
    Ok((flat, gin))
}

/// Largest relative error between backprop and central differences over all
/// parameters. Parameters are restored before returning.
pub fn grad_check(model: &mut LayeredModel, x: &Tensor, labels: &[usize], loss: Loss) -> Result<f64> {
    let count = model.param_count();
    if count > MAX_CHECK_PARAMS {
        return Err(Error::TooManyParams { count, limit: MAX_CHECK_PARAMS });
    }
    let (grads, _) = analytic(model, x, labels, loss)?;
    let base = model.flatten_params();
    let mut probe = base.clone();
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let numeric = derivative(|offset| {
            probe[i] = base[i] + offset;
            model.load_params(&probe)?;
            loss_at(model, x, labels, loss)
        })?;
        probe[i] = base[i];
        worst = worst.max(relative_error(grads[i], numeric));
    }
    model.load_params(&base)?;
    Ok(worst)
}

/// Same check for the gradient with respect to the model input.
pub fn grad_check_input(model: &mut LayeredModel, x: &Tensor, labels: &[usize], loss: Loss) -> Result<f64> {
    let (_, gin) = analytic(model, x, labels, loss)?;
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let numeric = derivative(|offset| {
            probe.data_mut()[i] = x.data()[i] + offset;
            loss_at(model, &probe, labels, loss)
        })?;
        probe.data_mut()[i] = x.data()[i];
        worst = worst.max(relative_error(gin.data()[i], numeric));
    }
    Ok(worst)
}

/// [`grad_check`] for the gradient assembled from the split passes (client
/// forward, server forward/backward, client backward) at `cut`, against
/// central differences of the unsplit loss.
pub fn split_grad_check(model: &LayeredModel, cut: usize, x: &Tensor, labels: &[usize], loss: Loss) -> Result<f64> {
    let count = model.param_count();
    if count > MAX_CHECK_PARAMS {
        return Err(Error::TooManyParams { count, limit: MAX_CHECK_PARAMS });
    }
    let (mut client, mut server) = model.split_at_block(cut)?;
    let acts = client_forward(&mut client, x.clone())?;
    let pass = server_forward_backward(&mut server, acts, labels, loss)?;
    let client_grads = client_backward(&mut client, pass.grad_activations)?;
    let grads: Vec<f64> = client_grads.iter().chain(&pass.param_grads).flat_map(|t| t.data().iter().copied()).collect();
    let mut full = model.clone();
    let base = full.flatten_params();
    let mut probe = base.clone();
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let numeric = derivative(|offset| {
            probe[i] = base[i] + offset;
            full.load_params(&probe)?;
            loss_at(&mut full, x, labels, loss)
        })?;
        probe[i] = base[i];
        worst = worst.max(relative_error(grads[i], numeric));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
}

/// Inputs uniform in `[-1, 1)` and uniform labels.
pub fn probe_batch(model: &LayeredModel, n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = rng::stream(seed, Purpose::GradCheck, &[n as u64]);
    let mut shape = vec![n];
    shape.extend_from_slice(model.input_shape());
    let len = shape.iter().product();
    let x = Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data");
    let y = (0..n).map(|_| rng.random_range(0..model.output_len())).collect();
    (x, y)
}

/// Parameter checks covering every layer kind and both losses, plus split
/// checks at every inner cut of a four-block MLP and a per-layer conv model.
///
/// Central differences at `FD_STEP` carry roughly 1e-10 of absolute roundoff,
/// so a gradient component near 1e-5 alone can push the relative error past
/// 1e-6. Whether that happens depends on the seed.
pub fn standard_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mlp = LayeredModel::build(&ModelSpec::mlp(4, &[8], 3), seed)?;
    let deep = LayeredModel::build(&ModelSpec::mlp(4, &[8, 6, 5], 3), seed)?;
    let conv = LayeredModel::build(
        &ModelSpec::flat(
            vec![1, 6, 6],
            &[
                LayerSpec::Conv2d { out_channels: 2, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { outputs: 3 },
                LayerSpec::SoftmaxOutput,
            ],
        ),
        seed,
    )?;
    let multi = LayeredModel::build(
        &ModelSpec::flat(
            vec![2, 5, 5],
            &[
                LayerSpec::Conv2d { out_channels: 3, kernel: 2 },
                LayerSpec::Relu,
                LayerSpec::Conv2d { out_channels: 2, kernel: 3 },
                LayerSpec::Flatten,
                LayerSpec::Dense { outputs: 3 },
                LayerSpec::SoftmaxOutput,
            ],
        ),
        seed,
    )?;
    let models = [("mlp", &mlp, 5), ("four-block mlp", &deep, 5), ("conv2d", &conv, 3), ("two-layer conv2d", &multi, 3)];
    for (name, model, n) in models {
        let (x, y) = probe_batch(model, n, seed);
        for (loss_name, loss) in [("cross-entropy", Loss::CrossEntropy), ("squared error", Loss::SquaredError)] {
            let mut m = model.clone();
            let e = grad_check(&mut m, &x, &y, loss)?;
            out.push(CheckResult { name: format!("{name}, {loss_name}"), max_rel_err: e });
        }
    }
    for (name, model, n) in [("four-block mlp", &deep, 5), ("conv2d", &conv, 3)] {
        let (x, y) = probe_batch(model, n, seed);
        for cut in 1..model.num_blocks() {
            let e = split_grad_check(model, cut, &x, &y, Loss::CrossEntropy)?;
            out.push(CheckResult { name: format!("split {name} at cut {cut}"), max_rel_err: e });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{LayerSpec, ModelSpec};
    use alloc::vec;

    #[test]
    fn parameter_free_model_is_vacuous() {
        let spec = ModelSpec::flat(vec![2, 3], &[LayerSpec::Relu, LayerSpec::Flatten]);
        let mut m = LayeredModel::build(&spec, 1).unwrap();
        let x = Tensor::new(vec![2, 2, 3], vec![0.3, -0.2, 0.5, 0.1, 0.9, -0.4, 0.2, 0.2, -0.7, 0.6, 0.1, 0.8]).unwrap();
        assert_eq!(grad_check(&mut m, &x, &[1, 4], Loss::CrossEntropy).unwrap(), 0.0);
    }

    #[test]
    fn split_check_matches_the_unsplit_check() {
        let model = LayeredModel::build(&ModelSpec::mlp(3, &[4, 4], 2), 7).unwrap();
        let (x, y) = probe_batch(&model, 4, 7);
        let full = grad_check(&mut model.clone(), &x, &y, Loss::CrossEntropy).unwrap();
        for cut in 1..model.num_blocks() {
            let split = split_grad_check(&model, cut, &x, &y, Loss::CrossEntropy).unwrap();
            assert!((split - full).abs() <= 1e-9, "cut {cut}: {split} vs {full}");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
