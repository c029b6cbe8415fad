//! Empirical estimates of the smoothness, gradient-variance and heterogeneity
//! constants, and numeric evaluation of the SFL-V1 convergence bound and the
//! local-drift inequality on recorded runs.
//!
//! Expectations are replaced by sample statistics or single realizations, so
//! every quantity here is an estimate.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, Partition};
use crate::rng::{self, Purpose};
use crate::{Error, LayeredModel, Loss, Result};

const GRAD_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionEstimates {
    /// Lower bound on the smoothness constant (largest observed secant ratio).
    pub s_hat: f64,
    /// Per-client minibatch-gradient variance.
    pub sigma2: Vec<f64>,
    /// `max_k ‖∇F_k − ∇f‖²`.
    pub eps2: f64,
    pub num_probes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs_term1: f64,
    pub rhs_term2: f64,
    pub lr_condition_ok: bool,
    pub tau: usize,
    pub f_star_assumed: f64,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs_term1 + self.rhs_term2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Whether `η ≤ 1/(√8·S·τ)` held for the supplied estimates.
    pub precondition_ok: bool,
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean loss and flat mean gradient over `indices`, evaluated in ascending
/// chunks. Indices are used in the order given.
pub fn loss_and_gradient(model: &mut LayeredModel, ds: &Dataset, indices: &[usize], loss: Loss) -> Result<(f64, Vec<f64>)> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("gradient over an empty index set".into()));
    }
    let total = indices.len() as f64;
    let mut value = 0.0;
    let mut grad = alloc::vec![0.0; model.param_count()];
    for chunk in indices.chunks(GRAD_CHUNK) {
        let w = chunk.len() as f64 / total;
        let (x, y) = ds.gather(chunk);
        let out = model.forward(x)?;
        let (l, g) = loss.evaluate(&out, &y)?;
        let (grads, _) = model.backward(g)?;
        value += w * l;
        for (acc, v) in grad.iter_mut().zip(grads.iter().flat_map(|t| t.data().iter())) {
            *acc += w * v;
        }
    }
    Ok((value, grad))
}

/// `∇F_k(θ)` for every client, on its full local data.
pub fn client_gradients(model: &mut LayeredModel, ds: &Dataset, partition: &Partition, loss: Loss) -> Result<Vec<Vec<f64>>> {
    (0..partition.num_clients()).map(|k| Ok(loss_and_gradient(model, ds, partition.client(k), loss)?.1)).collect()
}

/// `Σ_k α_k F_k` and `Σ_k α_k ∇F_k`.
pub fn global_loss_and_gradient(
    model: &mut LayeredModel,
    ds: &Dataset,
    partition: &Partition,
    loss: Loss,
) -> Result<(f64, Vec<f64>)> {
    let mut value = 0.0;
    let mut grad = alloc::vec![0.0; model.param_count()];
    for (k, &a) in partition.weights().iter().enumerate() {
        let (l, g) = loss_and_gradient(model, ds, partition.client(k), loss)?;
        value += a * l;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += a * v;
        }
    }
    Ok((value, grad))
}

/// Mean of `‖g_b − ∇F_k‖²` over the given minibatches, with `∇F_k` taken
/// over `indices`.
pub fn estimate_sigma2_from_batches(
    model: &mut LayeredModel,
    ds: &Dataset,
    indices: &[usize],
    batches: &[Vec<usize>],
    loss: Loss,
) -> Result<f64> {
    if batches.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 batches, got {}", batches.len())));
    }
    let (_, full) = loss_and_gradient(model, ds, indices, loss)?;
    let mut acc = 0.0;
    for b in batches {
        let (_, g) = loss_and_gradient(model, ds, b, loss)?;
        acc += dist_sq(&g, &full);
    }
    Ok(acc / batches.len() as f64)
}

/// Minibatch-gradient variance of client `k` at the current parameters, from
/// `num_batches` batches of `batch_size` distinct samples drawn uniformly.
#[allow(clippy::too_many_arguments)]
pub fn estimate_sigma2(
    model: &mut LayeredModel,
    ds: &Dataset,
    partition: &Partition,
    k: usize,
    batch_size: usize,
    num_batches: usize,
    seed: u64,
    loss: Loss,
) -> Result<f64> {
    let own = partition.client(k);
    if batch_size == 0 || batch_size > own.len() {
        return Err(Error::InvalidArgument(format!("client {k} holds {} samples, fewer than one batch of {batch_size}", own.len())));
    }
    let mut rng = rng::stream(seed, Purpose::Sigma, &[k as u64]);
    let batches: Vec<Vec<usize>> = (0..num_batches)
        .map(|_| {
            let mut picks = index::sample(&mut rng, own.len(), batch_size).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| own[i]).collect()
        })
        .collect();
    estimate_sigma2_from_batches(model, ds, own, &batches, loss)
}

/// `max_k ‖∇F_k(θ) − ∇f(θ)‖²` with `∇f = Σ_k α_k ∇F_k`.
pub fn estimate_eps2(model: &mut LayeredModel, ds: &Dataset, partition: &Partition, loss: Loss) -> Result<f64> {
    let grads = client_gradients(model, ds, partition, loss)?;
    let mut global = alloc::vec![0.0; model.param_count()];
    for (g, &a) in grads.iter().zip(partition.weights()) {
        for (acc, v) in global.iter_mut().zip(g) {
            *acc += a * v;
        }
    }
    Ok(grads.iter().map(|g| dist_sq(g, &global)).fold(0.0, f64::max))
}

/// `0.1·‖θ‖/√P`.
pub fn default_probe_radius(model: &LayeredModel) -> f64 {
    let p = model.flatten_params();
    0.1 * libm::sqrt(norm_sq(&p)) / libm::sqrt(p.len() as f64)
}

/// Largest `‖∇F(θ+δ) − ∇F(θ)‖/‖δ‖` over `num_pairs` probes around the
/// current parameters, `‖δ‖ = radius`, with `F` the mean loss over `indices`.
///
/// The first direction is random; each later one follows the previous
/// gradient difference, so the probes drift towards the top curvature
/// direction. Probe `i` does not depend on `num_pairs`, hence the estimate
/// never decreases as probes are added.
pub fn probe_smoothness(
    model: &LayeredModel,
    ds: &Dataset,
    indices: &[usize],
    loss: Loss,
    num_pairs: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    if !(radius >= 1e-12) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!("probe radius {radius} is below 1e-12")));
    }
    if num_pairs == 0 {
        return Err(Error::InvalidArgument("need at least one probe pair".into()));
    }
    let mut scratch = model.clone();
    let base = scratch.flatten_params();
    let (_, g0) = loss_and_gradient(&mut scratch, ds, indices, loss)?;
    let mut rng = rng::stream(seed, Purpose::Smoothness, &[]);
    let random_dir = |rng: &mut rng::Stream| -> Vec<f64> {
        let v: Vec<f64> = (0..base.len()).map(|_| StandardNormal.sample(rng)).collect();
        let n = libm::sqrt(norm_sq(&v));
        v.into_iter().map(|x| x * radius / n).collect()
    };
    let mut delta = random_dir(&mut rng);
    let mut best: f64 = 0.0;
    for _ in 0..num_pairs {
        let shifted: Vec<f64> = base.iter().zip(&delta).map(|(b, d)| b + d).collect();
        scratch.load_params(&shifted)?;
        let (_, g1) = loss_and_gradient(&mut scratch, ds, indices, loss)?;
        let diff: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
        let dn = libm::sqrt(norm_sq(&diff));
        best = best.max(dn / libm::sqrt(norm_sq(&delta)));
        delta = if dn > 0.0 && dn.is_finite() {
            diff.into_iter().map(|x| x * radius / dn).collect()
        } else {
            random_dir(&mut rng)
        };
    }
    Ok(best)
}

/// Smoothness as the largest per-client probe, plus per-client variance and
/// heterogeneity, all at the model's current parameters.
#[allow(clippy::too_many_arguments)]
pub fn estimate_assumptions(
    model: &mut LayeredModel,
    ds: &Dataset,
    partition: &Partition,
    loss: Loss,
    batch_size: usize,
    num_batches: usize,
    num_probes: usize,
    seed: u64,
) -> Result<AssumptionEstimates> {
    let radius = default_probe_radius(model);
    let mut s_hat: f64 = 0.0;
    let mut sigma2 = Vec::with_capacity(partition.num_clients());
    for k in 0..partition.num_clients() {
        let probe_seed = rng::derive_seed(seed, Purpose::Smoothness, &[k as u64]);
        s_hat = s_hat.max(probe_smoothness(model, ds, partition.client(k), loss, num_probes, radius, probe_seed)?);
        let b = batch_size.min(partition.sizes()[k]);
        sigma2.push(estimate_sigma2(model, ds, partition, k, b, num_batches, seed, loss)?);
    }
    let eps2 = estimate_eps2(model, ds, partition, loss)?;
    Ok(AssumptionEstimates { s_hat, sigma2, eps2, num_probes })
}

/// `min{1/(16·S·τ), 1/(8·S·K·τ·Σα_k²)}`.
pub fn lr_threshold(s_hat: f64, alphas: &[f64], tau: usize) -> Result<f64> {
    if !(s_hat > 0.0) {
        return Err(Error::InvalidArgument(format!("smoothness estimate must be positive, got {s_hat}")));
    }
    let t = tau as f64;
    let k = alphas.len() as f64;
    let a2: f64 = alphas.iter().map(|a| a * a).sum();
    Ok((1.0 / (16.0 * s_hat * t)).min(1.0 / (8.0 * s_hat * k * t * a2)))
}

/// Whether every rate in `lrs` is within [`lr_threshold`].
pub fn check_lr_condition(lrs: &[f64], s_hat: f64, alphas: &[f64], tau: usize) -> Result<bool> {
    let limit = lr_threshold(s_hat, alphas, tau)?;
    Ok(lrs.iter().all(|&lr| lr <= limit))
}

/// Both sides of the SFL-V1 bound for a run with `T = grad_norms_sq.len()`
/// rounds, where `grad_norms_sq[t] = ‖∇f(θ(t))‖²` and `f0 = f(θ(0))`.
pub fn eval_v1_bound(
    grad_norms_sq: &[f64],
    lrs: &[f64],
    f0: f64,
    f_star: f64,
    estimates: &AssumptionEstimates,
    alphas: &[f64],
    tau: usize,
) -> Result<BoundReport> {
    let rounds = grad_norms_sq.len();
    if rounds == 0 {
        return Err(Error::InvalidArgument("bound needs at least one round".into()));
    }
    if lrs.len() != rounds {
        return Err(Error::InvalidArgument(format!("{} rates for {rounds} rounds", lrs.len())));
    }
    if estimates.sigma2.len() != alphas.len() {
        return Err(Error::InvalidArgument("one variance estimate per client required".into()));
    }
    let t = rounds as f64;
    let k = alphas.len() as f64;
    let lhs = lrs.iter().zip(grad_norms_sq).map(|(l, g)| l * g).sum::<f64>() / t;
    let rhs_term1 = 4.0 / (t * tau as f64) * (f0 - f_star);
    let hetero: f64 = alphas.iter().zip(&estimates.sigma2).map(|(a, s)| a * a * (s + estimates.eps2)).sum();
    let lr_sq: f64 = lrs.iter().map(|l| l * l).sum();
    let rhs_term2 = 16.0 * k * estimates.s_hat * tau as f64 / t * hetero * lr_sq;
    let lr_condition_ok = estimates.s_hat > 0.0 && check_lr_condition(lrs, estimates.s_hat, alphas, tau)?;
    Ok(BoundReport { lhs, rhs_term1, rhs_term2, lr_condition_ok, tau, f_star_assumed: f_star })
}

/// Realized local drift `Σ_{i<τ} ‖θ^{t,i} − θ^t‖²` of one client against
/// `2τ²·8τη²(σ_k² + ε² + ‖∇f(θ^t)‖²)`, with `τ = snapshots.len()`.
pub fn check_lemma1_drift(
    snapshots: &[Vec<f64>],
    round_start: &[f64],
    lr: f64,
    s_hat: f64,
    sigma2_k: f64,
    eps2: f64,
    grad_norm_sq: f64,
) -> Result<DriftReport> {
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("no local snapshots recorded".into()));
    }
    if snapshots.iter().any(|s| s.len() != round_start.len()) {
        return Err(Error::InvalidArgument("snapshot length differs from the round-start model".into()));
    }
    let tau = snapshots.len() as f64;
    let lhs: f64 = snapshots.iter().map(|s| dist_sq(s, round_start)).sum();
    let rhs = 2.0 * tau * tau * 8.0 * tau * lr * lr * (sigma2_k + eps2 + grad_norm_sq);
    let precondition_ok = s_hat > 0.0 && lr <= 1.0 / (libm::sqrt(8.0) * s_hat * tau);
    Ok(DriftReport { lhs, rhs, holds: lhs <= rhs, precondition_ok })
}
