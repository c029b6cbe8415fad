//! Self-checks exposed on the command line: the SFL-V1/FedAvg equivalence
//! oracle and the bound diagnostics.

use std::fmt::Write as _;

use sfl_core::data::{Dataset, Partition};
use sfl_core::diagnostics::{self, AssumptionEstimates, BoundReport, DriftReport};
use sfl_core::protocol::{local_steps, RoundConfig, Simulation, Variant};
use sfl_core::LayeredModel;

use crate::config::{ExperimentConfig, VariantName};
use crate::error::{LabError, Result};
use crate::experiment::prepare;

pub const ORACLE_TOL: f64 = 1e-12;

/// Max absolute parameter deviation between the stitched SFL-V1 global model
/// and the FedAvg global model after each round.
pub fn oracle_v1_deviations(
    ds: &Dataset,
    partition: &Partition,
    config: &RoundConfig,
    initial: &LayeredModel,
    rounds: usize,
) -> Result<Vec<f64>> {
    let mut v1_cfg = config.clone();
    v1_cfg.variant = Variant::SflV1;
    let mut fed_cfg = config.clone();
    fed_cfg.variant = Variant::FedAvg;
    let mut v1 = Simulation::new(ds, partition, v1_cfg, initial)?;
    let mut fed = Simulation::new(ds, partition, fed_cfg, initial)?;
    let mut devs = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        v1.step()?;
        fed.step()?;
        let a = v1.global_model().flatten_params();
        let b = fed.global_model().flatten_params();
        devs.push(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    Ok(devs)
}

/// Runs the oracle on a config's workload; fails above [`ORACLE_TOL`].
pub fn oracle_v1(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let mut cfg = cfg.clone();
    cfg.variant = VariantName::Sflv1;
    cfg.validate()?;
    let p = prepare(&cfg)?;
    let devs = oracle_v1_deviations(&p.train, &p.partition, &cfg.round_config()?, &p.initial, cfg.rounds)?;
    if let Some((t, d)) = devs.iter().enumerate().find(|(_, d)| !(**d <= ORACLE_TOL)) {
        return Err(LabError::CheckFailed(format!("round {}: SFL-V1 deviates from FedAvg by {d:e}", t + 1)));
    }
    Ok(devs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnoseOptions {
    pub sigma_batches: usize,
    pub smoothness_probes: usize,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self { sigma_batches: 8, smoothness_probes: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseReport {
    pub estimates: AssumptionEstimates,
    pub tau: usize,
    pub lr_threshold: f64,
    pub lrs: Vec<f64>,
    pub f0: f64,
    /// `‖∇f(θ^t)‖²` at the start of each round.
    pub grad_norms_sq: Vec<f64>,
    pub bound: BoundReport,
    /// `(round, client, report)` for every client with local steps.
    pub drift: Vec<(usize, usize, DriftReport)>,
}

impl DiagnoseReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let e = &self.estimates;
        let _ = writeln!(s, "S_hat {:.6e}  eps2 {:.6e}  probes {}", e.s_hat, e.eps2, e.num_probes);
        let sig: Vec<String> = e.sigma2.iter().map(|v| format!("{v:.4e}")).collect();
        let _ = writeln!(s, "sigma2 per client [{}]", sig.join(", "));
        let _ = writeln!(s, "tau {}  lr threshold {:.6e}  lr condition {}", self.tau, self.lr_threshold, self.bound.lr_condition_ok);
        let b = &self.bound;
        let _ = writeln!(
            s,
            "bound (f* = {}): lhs {:.6e} <= {:.6e} + {:.6e}: {}",
            b.f_star_assumed,
            b.lhs,
            b.rhs_term1,
            b.rhs_term2,
            b.holds()
        );
        let held = self.drift.iter().filter(|(_, _, d)| d.holds).count();
        let pre = self.drift.iter().filter(|(_, _, d)| d.precondition_ok).count();
        let _ = writeln!(s, "local drift held {held}/{}  (step-size precondition met {pre}/{})", self.drift.len(), self.drift.len());
        s
    }
}

/// Estimates the assumption constants at the initial model, trains with
/// snapshots on, and evaluates the SFL-V1 bound and the local-drift
/// inequality on the recorded trajectory. FedAvg runs take the same path.
pub fn diagnose_run(
    ds: &Dataset,
    partition: &Partition,
    config: &RoundConfig,
    initial: &LayeredModel,
    rounds: usize,
    opts: DiagnoseOptions,
) -> Result<DiagnoseReport> {
    if !matches!(config.variant, Variant::SflV1 | Variant::FedAvg) {
        return Err(LabError::config("variant", "the bound is stated for sflv1 (and the equivalent fedavg)"));
    }
    let loss = config.loss;
    let mut probe = initial.clone();
    let estimates = diagnostics::estimate_assumptions(
        &mut probe,
        ds,
        partition,
        loss,
        config.batch_size,
        opts.sigma_batches,
        opts.smoothness_probes,
        config.seed,
    )?;
    let tau = local_steps(partition, config).into_iter().max().unwrap_or(0);
    let alphas = partition.weights();
    let lr_threshold = diagnostics::lr_threshold(estimates.s_hat, alphas, tau.max(1))?;
    let lrs = config.lr.table(rounds);

    let mut cfg = config.clone();
    cfg.record_snapshots = true;
    let mut sim = Simulation::new(ds, partition, cfg, initial)?;
    let mut grad_norms_sq = Vec::with_capacity(rounds);
    let mut drift = Vec::new();
    let mut f0 = 0.0;
    for (t, &lr) in lrs.iter().enumerate() {
        let mut global = sim.global_model();
        let (f, g) = diagnostics::global_loss_and_gradient(&mut global, ds, partition, loss)?;
        if t == 0 {
            f0 = f;
        }
        let gn = diagnostics::norm_sq(&g);
        grad_norms_sq.push(gn);
        let start = global.flatten_params();
        let m = sim.step()?;
        let snaps = m.snapshots.ok_or_else(|| LabError::CheckFailed("run recorded no snapshots".into()))?;
        for (k, s) in snaps.iter().enumerate().filter(|(_, s)| !s.is_empty()) {
            let r = diagnostics::check_lemma1_drift(s, &start, lr, estimates.s_hat, estimates.sigma2[k], estimates.eps2, gn)?;
            drift.push((t, k, r));
        }
    }
    let bound = diagnostics::eval_v1_bound(&grad_norms_sq, &lrs, f0, 0.0, &estimates, alphas, tau)?;
    Ok(DiagnoseReport { estimates, tau, lr_threshold, lrs, f0, grad_norms_sq, bound, drift })
}

pub fn diagnose(cfg: &ExperimentConfig, opts: DiagnoseOptions) -> Result<DiagnoseReport> {
    let p = prepare(cfg)?;
    diagnose_run(&p.train, &p.partition, &cfg.round_config()?, &p.initial, cfg.rounds, opts)
}
