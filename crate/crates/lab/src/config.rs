//! Experiment configuration, stored as TOML.
//!
//! ```toml
//! preset = "paper-sfl"          # optional: optimizer, rate and batch size
//! seed = 1
//! rounds = 40
//! clients = 8
//! variant = "sflv2"             # fedavg | sl | sflv1 | sflv2 | centralized
//! cut = 1
//! epochs = 1
//!
//! [dataset]
//! kind = "synthetic"
//! classes = 8
//! dim = 16
//! per_class = 200
//! test_per_class = 50
//! class_sep = 3.0
//!
//! [partition]
//! kind = "dirichlet"
//! mu = 0.1
//!
//! [model]
//! kind = "mlp"
//! hidden = [64, 64, 64]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sfl_core::protocol::{LrSchedule, RoundConfig, Variant};
use sfl_core::{BlockSpec, LayerSpec, ModelSpec, OptimizerKind};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Adam, rate 0.001, batch 64.
    PaperSfl,
    /// SGD, rate 0.01, batch 64.
    PaperFedavg,
}

impl Preset {
    pub fn optimizer(self) -> (OptimizerKind, f64) {
        match self {
            Preset::PaperSfl => (OptimizerKind::Adam, 0.001),
            Preset::PaperFedavg => (OptimizerKind::Sgd, 0.01),
        }
    }

    pub fn batch_size(self) -> usize {
        64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    Fedavg,
    Sl,
    Sflv1,
    Sflv2,
    Centralized,
}

impl From<VariantName> for Variant {
    fn from(v: VariantName) -> Self {
        match v {
            VariantName::Fedavg => Variant::FedAvg,
            VariantName::Sl => Variant::Sl,
            VariantName::Sflv1 => Variant::SflV1,
            VariantName::Sflv2 => Variant::SflV2,
            VariantName::Centralized => Variant::Centralized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

impl From<OptimizerName> for OptimizerKind {
    fn from(o: OptimizerName) -> Self {
        match o {
            OptimizerName::Sgd => OptimizerKind::Sgd,
            OptimizerName::Adam => OptimizerKind::Adam,
        }
    }
}

/// Unset fields fall back to the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<OptimizerName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Per-round rates; the last entry repeats. Overrides `lr`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_schedule: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian blobs. The test set shares the class centers and uses its own seed.
    Synthetic { classes: usize, dim: usize, per_class: usize, test_per_class: usize, class_sep: f64 },
    Idx { train_images: PathBuf, train_labels: PathBuf, test_images: PathBuf, test_labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PartitionConfig {
    Iid,
    Dirichlet {
        mu: f64,
        /// Defaults to the batch size.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_samples: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerConfig {
    Dense { outputs: usize },
    Relu,
    Conv2d { out_channels: usize, kernel: usize },
    Flatten,
    SoftmaxOutput,
}

impl From<LayerConfig> for LayerSpec {
    fn from(l: LayerConfig) -> Self {
        match l {
            LayerConfig::Dense { outputs } => LayerSpec::Dense { outputs },
            LayerConfig::Relu => LayerSpec::Relu,
            LayerConfig::Conv2d { out_channels, kernel } => LayerSpec::Conv2d { out_channels, kernel },
            LayerConfig::Flatten => LayerSpec::Flatten,
            LayerConfig::SoftmaxOutput => LayerSpec::SoftmaxOutput,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub name: String,
    pub layers: Vec<LayerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// One block per hidden layer plus the output block.
    Mlp { hidden: Vec<usize> },
    /// Four blocks for `[channels, height, width]` inputs.
    SmallConv,
    Layers { blocks: Vec<BlockConfig> },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Mlp { hidden: vec![64, 64, 64] }
    }
}

impl ModelConfig {
    pub fn num_blocks(&self) -> usize {
        match self {
            ModelConfig::Mlp { hidden } => hidden.len() + 1,
            ModelConfig::SmallConv => 4,
            ModelConfig::Layers { blocks } => blocks.len(),
        }
    }

    /// Model for samples of `sample_shape` and `classes` labels. MLPs take
    /// flat inputs of `product(sample_shape)` features.
    pub fn spec(&self, sample_shape: &[usize], classes: usize) -> Result<ModelSpec> {
        Ok(match self {
            ModelConfig::Mlp { hidden } => ModelSpec::mlp(sample_shape.iter().product(), hidden, classes),
            ModelConfig::SmallConv => {
                let &[c, h, w] = sample_shape else {
                    return Err(LabError::config("model.kind", "small-conv needs [channels, height, width] samples"));
                };
                ModelSpec::small_conv([c, h, w], classes)
            }
            ModelConfig::Layers { blocks } => ModelSpec {
                input_shape: sample_shape.to_vec(),
                blocks: blocks
                    .iter()
                    .map(|b| BlockSpec { name: b.name.clone(), layers: b.layers.iter().map(|&l| l.into()).collect() })
                    .collect(),
            },
        })
    }
}

fn default_epochs() -> usize {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub seed: u64,
    pub rounds: usize,
    pub clients: usize,
    pub variant: VariantName,
    #[serde(default)]
    pub cut: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub permute_per_round: bool,
    #[serde(default)]
    pub wrap_short_clients: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Write `final.ckpt` after the last round.
    #[serde(default = "yes")]
    pub checkpoint: bool,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative IDX paths are relative to the config file.
        if let DatasetConfig::Idx { train_images, train_labels, test_images, test_labels } = &mut cfg.dataset {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn optimizer_kind(&self) -> Result<OptimizerKind> {
        match (self.optimizer.kind, self.preset) {
            (Some(k), _) => Ok(k.into()),
            (None, Some(p)) => Ok(p.optimizer().0),
            (None, None) => Err(LabError::config("optimizer.kind", "missing and no preset given")),
        }
    }

    pub fn lr_schedule(&self) -> Result<LrSchedule> {
        match (&self.optimizer.lr_schedule, self.optimizer.lr, self.preset) {
            (Some(table), _, _) => Ok(LrSchedule::PerRound(table.clone())),
            (None, Some(lr), _) => Ok(LrSchedule::Constant(lr)),
            (None, None, Some(p)) => Ok(LrSchedule::Constant(p.optimizer().1)),
            (None, None, None) => Err(LabError::config("optimizer.lr", "missing and no preset given")),
        }
    }

    pub fn batch(&self) -> Result<usize> {
        self.batch_size
            .or(self.preset.map(Preset::batch_size))
            .ok_or_else(|| LabError::config("batch_size", "missing and no preset given"))
    }

    pub fn min_samples(&self) -> Result<usize> {
        match self.partition {
            PartitionConfig::Dirichlet { min_samples: Some(m), .. } => Ok(m),
            _ => self.batch(),
        }
    }

    pub fn round_config(&self) -> Result<RoundConfig> {
        let mut rc = RoundConfig::new(self.variant.into(), self.cut, self.optimizer_kind()?, 0.0);
        rc.lr = self.lr_schedule()?;
        rc.epochs = self.epochs;
        rc.batch_size = self.batch()?;
        rc.seed = self.seed;
        rc.permute_per_round = self.permute_per_round;
        rc.wrap_short_clients = self.wrap_short_clients;
        Ok(rc)
    }

    /// Checks every field that can be checked without reading data files.
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(LabError::config("rounds", "must be at least 1"));
        }
        if self.clients == 0 {
            return Err(LabError::config("clients", "must be at least 1"));
        }
        if self.batch()? == 0 {
            return Err(LabError::config("batch_size", "must be at least 1"));
        }
        self.optimizer_kind()?;
        match self.lr_schedule()? {
            LrSchedule::PerRound(t) if t.is_empty() => {
                return Err(LabError::config("optimizer.lr_schedule", "must not be empty"))
            }
            LrSchedule::PerRound(t) => {
                if let Some(bad) = t.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(LabError::config("optimizer.lr_schedule", format!("rate {bad} is not a finite non-negative number")));
                }
            }
            LrSchedule::Constant(lr) if !(lr.is_finite() && lr >= 0.0) => {
                return Err(LabError::config("optimizer.lr", format!("rate {lr} is not a finite non-negative number")))
            }
            LrSchedule::Constant(_) => {}
        }
        match &self.dataset {
            DatasetConfig::Synthetic { classes, dim, per_class, test_per_class, class_sep } => {
                if *classes < 2 {
                    return Err(LabError::config("dataset.classes", "must be at least 2"));
                }
                if *dim == 0 {
                    return Err(LabError::config("dataset.dim", "must be at least 1"));
                }
                if *per_class == 0 {
                    return Err(LabError::config("dataset.per_class", "must be at least 1"));
                }
                if *test_per_class == 0 {
                    return Err(LabError::config("dataset.test_per_class", "must be at least 1"));
                }
                if !class_sep.is_finite() {
                    return Err(LabError::config("dataset.class_sep", "must be finite"));
                }
            }
            DatasetConfig::Idx { .. } => {}
        }
        if let PartitionConfig::Dirichlet { mu, .. } = self.partition {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(LabError::config("partition.mu", format!("must be positive and finite, got {mu}")));
            }
        }
        match &self.model {
            ModelConfig::Mlp { hidden } if hidden.contains(&0) => {
                return Err(LabError::config("model.hidden", "widths must be positive"))
            }
            ModelConfig::Layers { blocks } if blocks.is_empty() || blocks.iter().any(|b| b.layers.is_empty()) => {
                return Err(LabError::config("model.blocks", "need at least one block and no empty blocks"))
            }
            _ => {}
        }
        let blocks = self.model.num_blocks();
        let (lo, hi) = match self.variant {
            VariantName::Sl | VariantName::Sflv1 => (1, blocks - 1),
            VariantName::Sflv2 => (0, blocks),
            VariantName::Fedavg | VariantName::Centralized => return Ok(()),
        };
        if self.cut < lo || self.cut > hi {
            return Err(LabError::config(
                "cut",
                format!("{:?} with a {blocks}-block model needs {lo} ≤ cut ≤ {hi}, got {}", self.variant, self.cut),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
preset = "paper-sfl"
rounds = 3
clients = 4
variant = "sflv1"
cut = 2

[dataset]
kind = "synthetic"
classes = 3
dim = 5
per_class = 20
test_per_class = 5
class_sep = 2.0

[partition]
kind = "dirichlet"
mu = 0.5
"#;

    fn field_of(err: LabError) -> String {
        match err {
            LabError::Config { field, .. } => field,
            other => panic!("expected a field error, got {other}"),
        }
    }

    #[test]
    fn preset_fills_optimizer_and_batch() {
        let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.optimizer_kind().unwrap(), OptimizerKind::Adam);
        assert_eq!(cfg.lr_schedule().unwrap(), LrSchedule::Constant(0.001));
        assert_eq!(cfg.batch().unwrap(), 64);
        assert_eq!(cfg.min_samples().unwrap(), 64);
        assert_eq!(cfg.model, ModelConfig::Mlp { hidden: vec![64, 64, 64] });
        let fed = ExperimentConfig::from_toml_str(&BASE.replace("paper-sfl", "paper-fedavg")).unwrap();
        assert_eq!(fed.optimizer_kind().unwrap(), OptimizerKind::Sgd);
        assert_eq!(fed.lr_schedule().unwrap(), LrSchedule::Constant(0.01));
    }

    #[test]
    fn explicit_fields_override_preset() {
        let text = format!("{BASE}\n[optimizer]\nkind = \"sgd\"\nlr_schedule = [0.1, 0.05]\n");
        let text = text.replace("cut = 2", "cut = 2\nbatch_size = 8");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.optimizer_kind().unwrap(), OptimizerKind::Sgd);
        assert_eq!(cfg.lr_schedule().unwrap(), LrSchedule::PerRound(vec![0.1, 0.05]));
        assert_eq!(cfg.batch().unwrap(), 8);
    }

    #[test]
    fn round_trips_through_toml() {
        let text = format!("{BASE}\n[model]\nkind = \"layers\"\n[[model.blocks]]\nname = \"a\"\nlayers = [{{ type = \"dense\", outputs = 4 }}, {{ type = \"relu\" }}]\n[[model.blocks]]\nname = \"b\"\nlayers = [{{ type = \"dense\", outputs = 3 }}, {{ type = \"softmax-output\" }}]\n");
        let text = text.replace("cut = 2", "cut = 1");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn field_level_errors() {
        let cases = [
            (BASE.replace("cut = 2", "cut = 4"), "cut"),
            (BASE.replace("cut = 2", "cut = 0"), "cut"),
            (BASE.replace("rounds = 3", "rounds = 0"), "rounds"),
            (BASE.replace("clients = 4", "clients = 0"), "clients"),
            (BASE.replace("mu = 0.5", "mu = -1.0"), "partition.mu"),
            (BASE.replace("classes = 3", "classes = 1"), "dataset.classes"),
            (BASE.replace("preset = \"paper-sfl\"", ""), "batch_size"),
            (BASE.replace("preset = \"paper-sfl\"", "batch_size = 8"), "optimizer.kind"),
            (format!("{BASE}\n[optimizer]\nlr = -0.5\n"), "optimizer.lr"),
        ];
        for (text, field) in cases {
            assert_eq!(field_of(ExperimentConfig::from_toml_str(&text).unwrap_err()), field);
        }
        // Both limit cuts are valid only for SFL-V2.
        let v2 = BASE.replace("sflv1", "sflv2");
        assert!(ExperimentConfig::from_toml_str(&v2.replace("cut = 2", "cut = 4")).is_ok());
        assert!(ExperimentConfig::from_toml_str(&v2.replace("cut = 2", "cut = 0")).is_ok());
        assert!(matches!(
            ExperimentConfig::from_toml_str(&format!("{BASE}\nbogus = 1\n")),
            Err(LabError::ConfigParse(_))
        ));
    }
}
