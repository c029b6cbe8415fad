//! Dataset, partition and model construction from a config, and the
//! `run`/`sweep`/`partition` drivers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sfl_core::data::{self, Dataset, Partition, SyntheticSpec};
use sfl_core::protocol::{evaluate, Evaluation, Simulation};
use sfl_core::rng::{derive_seed, Purpose};
use sfl_core::{LayeredModel, Loss};

use crate::checkpoint;
use crate::config::{DatasetConfig, ExperimentConfig, ModelConfig, PartitionConfig};
use crate::error::{LabError, Result};
use crate::idx::load_idx;
use crate::metrics::{MetricsRow, MetricsWriter};

/// Everything a run needs besides the protocol state.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    pub initial: LayeredModel,
}

fn with_classes(ds: Dataset, classes: usize) -> Result<Dataset> {
    if ds.num_classes() == classes {
        return Ok(ds);
    }
    Ok(Dataset::new(ds.features().clone(), ds.labels().to_vec(), classes)?)
}

fn flattened(ds: Dataset) -> Result<Dataset> {
    if ds.feature_shape().len() <= 1 {
        return Ok(ds);
    }
    let width = ds.feature_shape().iter().product();
    let features = ds.features().clone().reshape(vec![ds.len(), width])?;
    Ok(Dataset::new(features, ds.labels().to_vec(), ds.num_classes())?)
}

/// Train and test sets. MLP models see flattened samples.
pub fn build_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match &cfg.dataset {
        &DatasetConfig::Synthetic { classes, dim, per_class, test_per_class, class_sep } => {
            let spec = SyntheticSpec { num_classes: classes, dim, per_class, class_sep };
            let train = data::gen_synthetic(&spec, cfg.seed)?;
            let test_spec = SyntheticSpec { per_class: test_per_class, ..spec };
            let test = data::gen_synthetic(&test_spec, derive_seed(cfg.seed, Purpose::Synthetic, &[1]))?;
            (train, test)
        }
        DatasetConfig::Idx { train_images, train_labels, test_images, test_labels } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            if train.feature_shape() != test.feature_shape() {
                return Err(LabError::config(
                    "dataset",
                    format!("train samples are {:?} but test samples are {:?}", train.feature_shape(), test.feature_shape()),
                ));
            }
            let classes = train.num_classes().max(test.num_classes());
            (with_classes(train, classes)?, with_classes(test, classes)?)
        }
    };
    if matches!(cfg.model, ModelConfig::Mlp { .. }) {
        Ok((flattened(train)?, flattened(test)?))
    } else {
        Ok((train, test))
    }
}

pub fn build_partition(cfg: &ExperimentConfig, train: &Dataset) -> Result<Partition> {
    Ok(match cfg.partition {
        PartitionConfig::Iid => data::partition_iid(train, cfg.clients, cfg.seed)?,
        PartitionConfig::Dirichlet { mu, .. } => {
            data::partition_dirichlet(train, cfg.clients, mu, cfg.seed, cfg.min_samples()?)?
        }
    })
}

pub fn build_model(cfg: &ExperimentConfig, train: &Dataset) -> Result<LayeredModel> {
    let spec = cfg.model.spec(train.feature_shape(), train.num_classes())?;
    LayeredModel::build(&spec, cfg.seed).map_err(|e| LabError::config("model", e.to_string()))
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (train, test) = build_datasets(cfg)?;
    let partition = build_partition(cfg, &train)?;
    let initial = build_model(cfg, &train)?;
    Ok(Prepared { train, test, partition, initial })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub final_eval: Evaluation,
    pub total_uplink: u64,
    pub total_downlink: u64,
}

/// Trains for `cfg.rounds` rounds and writes `config.toml` (the resolved
/// config), `metrics.csv` and, if enabled, `final.ckpt` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    let prepared = prepare(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    let mut resolved = cfg.clone();
    resolved.out_dir = out_dir.to_owned();
    let config_path = out_dir.join("config.toml");
    std::fs::write(&config_path, resolved.to_toml_string()?).map_err(|e| LabError::io(&config_path, e))?;

    let mut sim = Simulation::new(&prepared.train, &prepared.partition, cfg.round_config()?, &prepared.initial)?;
    let mut writer = MetricsWriter::create(&out_dir.join("metrics.csv"))?;
    let mut rows = Vec::with_capacity(cfg.rounds);
    let mut model = prepared.initial.clone();
    let (mut up, mut down) = (0, 0);
    for round in 1..=cfg.rounds {
        let start = Instant::now();
        let m = sim.step()?;
        model = sim.global_model();
        let eval = evaluate(&mut model, &prepared.test, Loss::CrossEntropy)?;
        up += m.uplink();
        down += m.downlink();
        let row = MetricsRow {
            round,
            train_loss: m.train_loss,
            test_loss: eval.loss,
            test_acc: eval.accuracy,
            uplink_elems: m.uplink(),
            downlink_elems: m.downlink(),
            wall_ms: start.elapsed().as_millis() as u64,
        };
        writer.append(&row)?;
        rows.push(row);
    }
    if cfg.checkpoint {
        checkpoint::save(&model, &out_dir.join("final.ckpt"))?;
    }
    let final_eval = evaluate(&mut model, &prepared.test, Loss::CrossEntropy)?;
    Ok(RunSummary { out_dir: out_dir.to_owned(), rows, final_eval, total_uplink: up, total_downlink: down })
}

/// One run per cut in `cut_<n>/` subdirectories plus a `sweep.csv` summary.
pub fn run_sweep(cfg: &ExperimentConfig, cuts: &[usize], out_dir: &Path) -> Result<Vec<(usize, RunSummary)>> {
    if cuts.is_empty() {
        return Err(LabError::config("cuts", "need at least one cut"));
    }
    let mut runs = Vec::with_capacity(cuts.len());
    for &cut in cuts {
        let mut c = cfg.clone();
        c.cut = cut;
        c.validate()?;
        runs.push((cut, run_experiment(&c, &out_dir.join(format!("cut_{cut}")))?));
    }
    let path = out_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["cut", "final_test_loss", "final_test_acc", "total_uplink_elems", "total_downlink_elems"])?;
    for (cut, run) in &runs {
        w.write_record([
            cut.to_string(),
            run.final_eval.loss.to_string(),
            run.final_eval.accuracy.to_string(),
            run.total_uplink.to_string(),
            run.total_downlink.to_string(),
        ])?;
    }
    w.flush().map_err(|e| LabError::io(&path, e))?;
    Ok(runs)
}

/// Per-client sizes, weights and class histograms.
pub fn inspect_partition(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let (train, _) = build_datasets(cfg)?;
    let p = build_partition(cfg, &train)?;
    let mut out = String::new();
    let _ = writeln!(out, "clients {}  samples {}  classes {}", p.num_clients(), p.total(), train.num_classes());
    let _ = writeln!(out, "client,size,alpha,top_class_share,class_counts");
    for k in 0..p.num_clients() {
        let counts = train.class_counts(p.client(k));
        let top = *counts.iter().max().unwrap_or(&0) as f64 / p.sizes()[k] as f64;
        let hist: Vec<String> = counts.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{k},{},{:.6},{top:.4},{}", p.sizes()[k], p.weights()[k], hist.join(" "));
    }
    Ok(out)
}
