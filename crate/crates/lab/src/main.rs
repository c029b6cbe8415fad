use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sfl_lab::checks::{self, DiagnoseOptions};
use sfl_lab::experiment::{inspect_partition, run_experiment, run_sweep};
use sfl_lab::{ExperimentConfig, LabError, Result};

/// Split federated learning experiments.
#[derive(Parser)]
#[command(name = "sfl-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write config.toml, metrics.csv and final.ckpt.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config and SFL_OUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the same configuration at several cuts.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        cuts: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-client partition statistics.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        inspect: bool,
    },
    /// Finite-difference gradient checks on every layer kind and split pass.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Estimate S, sigma² and eps², then evaluate the SFL-V1 bound on a run.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8)]
        sigma_batches: usize,
        #[arg(long, default_value_t = 8)]
        probes: usize,
    },
    /// Check that SFL-V1 and FedAvg produce the same global model every round.
    OracleV1 {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Largest relative error accepted by `gradcheck`.
const GRADCHECK_TOL: f64 = 1e-6;

fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(dir) = out.or_else(|| std::env::var_os("SFL_OUT_DIR").map(PathBuf::from)) {
        cfg.out_dir = dir;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = load(&config, seed, out)?;
            let summary = run_experiment(&cfg, &cfg.out_dir)?;
            println!(
                "{} rounds  test_loss {:.6}  test_acc {:.4}  uplink {}  downlink {}  -> {}",
                summary.rows.len(),
                summary.final_eval.loss,
                summary.final_eval.accuracy,
                summary.total_uplink,
                summary.total_downlink,
                summary.out_dir.display()
            );
        }
        Command::Sweep { config, cuts, seed, out } => {
            let cfg = load(&config, seed, out)?;
            for (cut, run) in run_sweep(&cfg, &cuts, &cfg.out_dir)? {
                println!("cut {cut}  test_acc {:.4}  uplink {}", run.final_eval.accuracy, run.total_uplink);
            }
        }
        Command::Partition { config, inspect } => {
            let report = inspect_partition(&load(&config, None, None)?)?;
            if inspect {
                print!("{report}");
            } else {
                print!("{}", report.lines().next().unwrap_or_default());
                println!();
            }
        }
        Command::Gradcheck { seed } => {
            let results = sfl_core::gradcheck::standard_suite(seed)?;
            let mut failed = Vec::new();
            for r in &results {
                let ok = r.max_rel_err <= GRADCHECK_TOL;
                println!("{} {:.3e}  {}", if ok { "ok  " } else { "FAIL" }, r.max_rel_err, r.name);
                if !ok {
                    failed.push(r.name.clone());
                }
            }
            if !failed.is_empty() {
                return Err(LabError::CheckFailed(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
        Command::Diagnose { config, sigma_batches, probes } => {
            let cfg = load(&config, None, None)?;
            let opts = DiagnoseOptions { sigma_batches, smoothness_probes: probes };
            print!("{}", checks::diagnose(&cfg, opts)?.render());
        }
        Command::OracleV1 { config } => {
            let devs = checks::oracle_v1(&load(&config, None, None)?)?;
            let worst = devs.iter().copied().fold(0.0, f64::max);
            println!("SFL-V1 matches FedAvg over {} rounds, max deviation {worst:e}", devs.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
