//! Experiment configuration, read from TOML.
//!
//! ```toml
//! out_dir = "runs/mnist"
//!
//! [data]
//! source = "mnist"          # or "synthetic"
//! mnist_dir = "data/mnist"
//! n_valid = 6000
//! n_train = 10000         # optional cap on training pairs
//!
//! [model]
//! gx = [392, 1000, 50]
//! gy = [392, 1000, 50]
//! disc_hidden = [1000]
//! activation = "relu"
//! output_norm = true
//!
//! [train]
//! lambda = 5.0
//! epochs = 50
//!
//! [eval]
//! methods = ["demian", "cca"]
//! protocols = ["srl", "correlation"]
//! ```
//!
//! Every key is optional; omitted keys take the defaults shown by
//! [`ExperimentConfig::default`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{LogRegConfig, Ridge};
use crate::data::{SynthSpec, MNIST_HALF};
use crate::demian::{Architecture, TrainConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Mnist,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory holding the four standard MNIST IDX files.
    pub mnist_dir: PathBuf,
    /// Pairs held out of the training split for validation; defaults to
    /// 6000 for MNIST and none for synthetic data.
    pub n_valid: Option<usize>,
    /// Keep only the first `n_train` training pairs (after the validation split).
    pub n_train: Option<usize>,
    pub validation_seed: u64,
    /// Synthetic training data; its `n` is the training size.
    pub synthetic: SynthSpec,
    pub synthetic_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Mnist,
            mnist_dir: PathBuf::from("data/mnist"),
            n_valid: None,
            n_train: None,
            validation_seed: 0,
            synthetic: SynthSpec::default(),
            synthetic_test: 1000,
        }
    }
}

impl DataConfig {
    /// Feature widths of the two views.
    pub fn widths(&self) -> (usize, usize) {
        match self.source {
            DataSource::Mnist => (MNIST_HALF, MNIST_HALF),
            DataSource::Synthetic => (self.synthetic.d, self.synthetic.d),
        }
    }

    pub fn validation_size(&self) -> usize {
        self.n_valid.unwrap_or(match self.source {
            DataSource::Mnist => 6000,
            DataSource::Synthetic => 0,
        })
    }

    /// Names used for the two views in metrics files.
    pub fn modality_names(&self) -> (&'static str, &'static str) {
        match self.source {
            DataSource::Mnist => ("left", "right"),
            DataSource::Synthetic => ("x", "y"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Demian,
    Cca,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Demian => "demian",
            Method::Cca => "cca",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Classifier trained on one view, tested on the other, both directions.
    Srl,
    /// Top-k canonical correlation between the views' test embeddings.
    Correlation,
    /// Top-k per-dimension Pearson correlation, without alignment.
    PearsonCorrelation,
    /// SRL accuracy for each labeled-subset size in `label_sizes`.
    LabelEfficiency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub protocols: Vec<Protocol>,
    pub cca_components: usize,
    pub cca_ridge: Ridge,
    pub correlation_k: usize,
    pub label_sizes: Vec<usize>,
    pub label_seed: u64,
    pub logreg: LogRegConfig,
    /// Write train/test embeddings of every method as matrix binaries.
    pub export_embeddings: bool,
    /// Also write them as text.
    pub export_text: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: vec![Method::Demian, Method::Cca],
            protocols: vec![Protocol::Srl, Protocol::Correlation],
            cca_components: 50,
            cca_ridge: Ridge::default(),
            correlation_k: 50,
            label_sizes: vec![100, 1000, 10_000],
            label_seed: 0,
            logreg: LogRegConfig::default(),
            export_embeddings: true,
            export_text: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: Architecture,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: Architecture::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let (dx, dy) = self.data.widths();
        if self.model.gx[0] != dx || self.model.gy[0] != dy {
            return Err(Error::Config(format!(
                "generator inputs ({}, {}) do not match the data widths ({dx}, {dy})",
                self.model.gx[0], self.model.gy[0]
            )));
        }
        let eval = &self.eval;
        if eval.methods.contains(&Method::Cca) && eval.cca_components > dx.min(dy) {
            return Err(Error::Config(format!(
                "{} CCA components exceed the view widths ({dx}, {dy})",
                eval.cca_components
            )));
        }
        let wants_corr = eval
            .protocols
            .iter()
            .any(|p| matches!(p, Protocol::Correlation | Protocol::PearsonCorrelation));
        if wants_corr {
            for m in &eval.methods {
                let width = match m {
                    Method::Demian => self.model.d_z(),
                    Method::Cca => eval.cca_components,
                };
                if eval.correlation_k > width {
                    return Err(Error::Config(format!(
                        "correlation_k = {} exceeds the {} embedding width {width}",
                        eval.correlation_k,
                        m.name()
                    )));
                }
            }
        }
        if self.data.source == DataSource::Synthetic {
            if self.data.synthetic_test == 0 {
                return Err(Error::Config("synthetic_test must be positive".into()));
            }
            if self.data.validation_size() >= self.data.synthetic.n {
                return Err(Error::Config(format!(
                    "n_valid = {} leaves no synthetic training pairs",
                    self.data.validation_size()
                )));
            }
        }
        Ok(())
    }
}
