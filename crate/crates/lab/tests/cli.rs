//! The `sfl-lab` binary: exit codes, output layout and the output-directory override.

use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 2
rounds = 2
clients = 3
variant = "sflv1"
cut = 1
batch_size = 8

[optimizer]
kind = "sgd"
lr = 0.05

[dataset]
kind = "synthetic"
classes = 3
dim = 4
per_class = 15
test_per_class = 5
class_sep = 3.0

[partition]
kind = "dirichlet"
mu = 1.0

[model]
kind = "mlp"
hidden = [6, 5]
"#;

fn sfl_lab(args: &[&str], cwd: &Path, env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sfl-lab"));
    cmd.args(args).current_dir(cwd).env_remove("SFL_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("SFL_OUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn run_writes_artifacts_under_the_env_override() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", CONFIG);
    let env_out = dir.path().join("from-env");
    let out = sfl_lab(&["run", "--config", "c.toml"], dir.path(), Some(&env_out));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["config.toml", "metrics.csv", "final.ckpt"] {
        assert!(env_out.join(file).exists(), "{file}");
    }
    let csv = std::fs::read_to_string(env_out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    // --out beats the environment.
    let flag_out = dir.path().join("from-flag");
    let out = sfl_lab(&["run", "--config", "c.toml", "--out", "from-flag", "--seed", "9"], dir.path(), Some(&env_out));
    assert!(out.status.success());
    let saved = std::fs::read_to_string(flag_out.join("config.toml")).unwrap();
    assert!(saved.contains("seed = 9"));
}

#[test]
fn exit_codes_follow_error_families() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad_cut.toml", &CONFIG.replace("cut = 1", "cut = 3"));
    write(dir.path(), "bad_syntax.toml", "rounds = ");
    write(dir.path(), "too_many.toml", &CONFIG.replace("clients = 3", "clients = 100"));
    let code = |args: &[&str]| sfl_lab(args, dir.path(), None).status.code();
    assert_eq!(code(&["run", "--config", "bad_cut.toml"]), Some(2));
    assert_eq!(code(&["run", "--config", "bad_syntax.toml"]), Some(2));
    assert_eq!(code(&["run", "--config", "missing.toml"]), Some(3));
    assert_eq!(code(&["run", "--config", "too_many.toml"]), Some(4));
    assert_eq!(code(&["gradcheck"]), Some(0));
}

#[test]
fn inspection_and_checks_succeed() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", CONFIG);
    let out = sfl_lab(&["partition", "--config", "c.toml", "--inspect"], dir.path(), None);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2 + 3);
    let out = sfl_lab(&["oracle-v1", "--config", "c.toml"], dir.path(), None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = sfl_lab(&["diagnose", "--config", "c.toml"], dir.path(), None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("S_hat"));
    let out = sfl_lab(&["sweep", "--config", "c.toml", "--cuts", "1,2", "--out", "sw"], dir.path(), None);
    assert!(out.status.success());
    assert!(dir.path().join("sw/sweep.csv").exists());
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            sfl_lab::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
