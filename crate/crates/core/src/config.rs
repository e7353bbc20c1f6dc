//! Declarative experiment description, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::adam::AdamConfig;
use crate::data::{NormalizationMethod, RegressorSpec};
use crate::error::{Error, Result};
use crate::inn::Trick;
use crate::models::{Architecture, CrispTrainConfig, ModelKind};
use crate::synthetic::SyntheticConfig;
use crate::uq::UqTrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default = "default_u_column")]
    pub u_column: String,
    #[serde(default = "default_y_column")]
    pub y_column: String,
}

fn default_u_column() -> String {
    "u".into()
}

fn default_y_column() -> String {
    "y".into()
}

/// Where the series comes from and how it is cut. Exactly one of `csv` and
/// `synthetic` must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    pub normalization: NormalizationMethod,
    /// Train/validation/test percentages.
    pub split: [f64; 3],
    /// Trajectory window length `N`.
    pub window: usize,
    /// Expected series length, checked when the data is loaded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_rate() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub regressor: RegressorSpec,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Initial uncertainty rate of hidden-layer radii.
    #[serde(default = "default_rate")]
    pub r_h: f64,
    /// Initial uncertainty rate of output-layer radii.
    #[serde(default = "default_rate")]
    pub r_o: f64,
    #[serde(default)]
    pub freeze_recurrent: bool,
}

impl ModelConfig {
    pub fn architecture(&self, kind: ModelKind) -> Architecture {
        Architecture {
            kind,
            hidden: self.hidden.clone(),
            activation: self.activation,
            regressor: self.regressor,
        }
    }
}

fn default_crisp_epochs() -> usize {
    300
}

fn default_uq_epochs() -> usize {
    200
}

fn default_batch() -> usize {
    64
}

fn default_lr() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrispBlock {
    #[serde(default = "default_crisp_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
}

impl Default for CrispBlock {
    fn default() -> Self {
        CrispBlock {
            epochs: default_crisp_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
        }
    }
}

fn default_alphas() -> Vec<f64> {
    vec![0.90, 0.95]
}

fn default_lambda() -> f64 {
    UqTrainConfig::default().lambda
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqBlock {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_uq_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
}

impl Default for UqBlock {
    fn default() -> Self {
        UqBlock {
            alphas: default_alphas(),
            lambda: default_lambda(),
            epochs: default_uq_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lstm: Option<ModelConfig>,
    #[serde(default)]
    pub crisp: CrispBlock,
    #[serde(default)]
    pub uq: UqBlock,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

/// Interval model flavour: network kind plus radius trick (`1` = relu,
/// `2` = abs).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub kind: ModelKind,
    pub trick: Trick,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant { kind: ModelKind::Lstm, trick: Trick::Relu },
        Variant { kind: ModelKind::Lstm, trick: Trick::Abs },
        Variant { kind: ModelKind::Node, trick: Trick::Relu },
        Variant { kind: ModelKind::Node, trick: Trick::Abs },
    ];

    /// File-name form, e.g. `inode2`.
    pub fn slug(&self) -> String {
        let n = match self.trick {
            Trick::Relu => 1,
            Trick::Abs => 2,
        };
        format!("i{}{n}", self.kind)
    }

    /// Display form, e.g. `INODE-2`.
    pub fn tag(&self) -> String {
        let s = self.slug();
        let (name, n) = s.split_at(s.len() - 1);
        format!("{}-{n}", name.to_uppercase())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.to_ascii_lowercase().chars().filter(|c| *c != '-').collect();
        Variant::ALL
            .into_iter()
            .find(|v| v.slug() == norm)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected ilstm1, ilstm2, inode1 or inode2)")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.tag())
    }
}

impl ExperimentConfig {
    /// Parses a `.json` file as JSON and anything else as TOML. Relative
    /// paths inside the file are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(csv) = &mut cfg.dataset.csv {
            if csv.path.is_relative() {
                csv.path = base.join(&csv.path);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        if let Some(csv) = &cfg.dataset.csv {
            if !csv.path.exists() {
                return Err(Error::Io {
                    path: csv.path.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file does not exist"),
                });
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let d = &self.dataset;
        match (&d.csv, &d.synthetic) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return bad("dataset needs exactly one of `csv` or `synthetic`".into()),
        }
        crate::data::split_sizes(1000, d.split).map_err(|e| Error::Config(e.to_string()))?;
        if d.window < 2 {
            return bad(format!("window length must be at least 2, got {}", d.window));
        }
        if self.node.is_none() && self.lstm.is_none() {
            return bad("at least one of `node` or `lstm` must be configured".into());
        }
        for (kind, m) in self.models() {
            m.architecture(kind).validate().map_err(|e| Error::Config(format!("{kind}: {e}")))?;
            if m.regressor.warmup() + 1 >= d.window {
                return bad(format!(
                    "{kind}: window length {} leaves no room after a warm-up of {}",
                    d.window,
                    m.regressor.warmup()
                ));
            }
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.uq.alphas.is_empty() {
            return bad("coverage target list is empty".into());
        }
        for kind in self.models().map(|(k, _)| k) {
            for &alpha in &self.uq.alphas {
                self.uq_config(kind, Trick::Abs, alpha, 0)?.validate().map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        if self.crisp.batch_size == 0 || !(self.crisp.learning_rate > 0.0) {
            return bad("crisp training needs a positive batch size and learning rate".into());
        }
        Ok(())
    }

    pub fn models(&self) -> impl Iterator<Item = (ModelKind, &ModelConfig)> {
        [(ModelKind::Node, self.node.as_ref()), (ModelKind::Lstm, self.lstm.as_ref())]
            .into_iter()
            .filter_map(|(k, m)| m.map(|m| (k, m)))
    }

    pub fn model(&self, kind: ModelKind) -> Result<&ModelConfig> {
        match kind {
            ModelKind::Node => self.node.as_ref(),
            ModelKind::Lstm => self.lstm.as_ref(),
        }
        .ok_or_else(|| Error::Config(format!("no `{kind}` model block in the configuration")))
    }

    /// Variants whose model block is present.
    pub fn variants(&self) -> Vec<Variant> {
        Variant::ALL
            .into_iter()
            .filter(|v| self.model(v.kind).is_ok())
            .collect()
    }

    pub fn crisp_config(&self, seed: u64) -> CrispTrainConfig {
        CrispTrainConfig {
            epochs: self.crisp.epochs,
            batch_size: self.crisp.batch_size,
            adam: AdamConfig::with_learning_rate(self.crisp.learning_rate),
            seed,
        }
    }

    pub fn uq_config(&self, kind: ModelKind, trick: Trick, alpha: f64, seed: u64) -> Result<UqTrainConfig> {
        let m = self.model(kind)?;
        Ok(UqTrainConfig {
            alpha,
            lambda: self.uq.lambda,
            epochs: self.uq.epochs,
            batch_size: self.uq.batch_size,
            adam: AdamConfig::with_learning_rate(self.uq.learning_rate),
            r_h: m.r_h,
            r_o: m.r_o,
            trick,
            seed,
            freeze_recurrent: m.freeze_recurrent && kind == ModelKind::Lstm,
        })
    }
}
