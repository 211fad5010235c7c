//! End-to-end runs: load data, fit the requested methods, evaluate, and write
//! every artifact under the configured output directory.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::baselines::{cca_project, fit_cca, CcaModel};
use crate::config::{DataConfig, DataSource, ExperimentConfig, Method, Protocol};
use crate::data::{
    load_mnist_idx, make_validation_split, split_left_right, synth_rotation_dataset,
    PairedDataset, SplitTag, SynthSpec,
};
use crate::demian::{train_demian_observed, Architecture, EpochStats, GeneratorPair, TrainedDemian};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::eval::{label_efficiency_curve, pearson_per_dimension, srl_evaluate, topk_correlation, SrlDirection};
use crate::io::{
    ensure_dir, save_checkpoint, write_json, write_matrix_bin, write_matrix_text, write_metrics,
    Checkpoint, MetricRow,
};

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: PairedDataset,
    pub valid: Option<PairedDataset>,
    pub test: PairedDataset,
}

/// Split-MNIST train (minus validation), validation and test halves.
pub fn load_split_mnist(dir: impl AsRef<Path>, n_valid: usize, seed: u64) -> Result<ExperimentData> {
    let dir = dir.as_ref();
    let (images, labels) = load_mnist_idx(dir.join(MNIST_TRAIN_IMAGES), dir.join(MNIST_TRAIN_LABELS))?;
    let full = split_left_right(&images, Some(labels), SplitTag::Train)?;
    drop(images);
    let (train, valid) = make_validation_split(&full, n_valid, seed)?;
    let (images, labels) = load_mnist_idx(dir.join(MNIST_TEST_IMAGES), dir.join(MNIST_TEST_LABELS))?;
    let test = split_left_right(&images, Some(labels), SplitTag::Test)?;
    Ok(ExperimentData {
        train,
        valid: (!valid.is_empty()).then_some(valid),
        test,
    })
}

pub fn load_data(cfg: &DataConfig) -> Result<ExperimentData> {
    let mut data = match cfg.source {
        DataSource::Mnist => load_split_mnist(&cfg.mnist_dir, cfg.validation_size(), cfg.validation_seed)?,
        DataSource::Synthetic => {
            let n = cfg.synthetic.n;
            let all = synth_rotation_dataset(&SynthSpec {
                n: n + cfg.synthetic_test,
                ..cfg.synthetic.clone()
            })?;
            let train_idx: Vec<usize> = (0..n).collect();
            let test_idx: Vec<usize> = (n..all.len()).collect();
            let (train, valid) =
                make_validation_split(&all.select(&train_idx, SplitTag::Train), cfg.validation_size(), cfg.validation_seed)?;
            ExperimentData {
                train,
                valid: (!valid.is_empty()).then_some(valid),
                test: all.select(&test_idx, SplitTag::Test),
            }
        }
    };
    if let Some(n) = cfg.n_train {
        data.train = data.train.head(n);
    }
    Ok(data)
}

/// Checkpoint holding `gx`, `gy` and `disc` with the architecture and
/// training configuration as metadata.
pub fn demian_checkpoint(trained: &TrainedDemian, arch: &Architecture) -> Checkpoint {
    Checkpoint {
        metadata: serde_json::json!({
            "model": "demian",
            "architecture": arch,
            "train": trained.model.config(),
            "best_epoch": trained.best_epoch,
        }),
        networks: vec![
            ("gx".into(), trained.generators().gx.clone()),
            ("gy".into(), trained.generators().gy.clone()),
            ("disc".into(), trained.discriminator().net.clone()),
        ],
    }
}

/// Rebuilds the generators stored by [`demian_checkpoint`].
pub fn generators_from_checkpoint(ck: &Checkpoint) -> Result<GeneratorPair> {
    let arch: Architecture = serde_json::from_value(ck.metadata["architecture"].clone())
        .map_err(|e| Error::Format(format!("checkpoint architecture: {e}")))?;
    let gx = ck.network("gx")?.clone();
    let gy = ck.network("gy")?.clone();
    if gx.in_width() != arch.gx[0] || gy.in_width() != arch.gy[0] || gx.out_width() != gy.out_width() {
        return Err(Error::Format("checkpoint networks disagree with their architecture".into()));
    }
    Ok(GeneratorPair {
        gx,
        gy,
        activation: arch.activation,
    })
}

/// Evaluation context shared by every method of one run.
pub struct Evaluator<'a> {
    pub cfg: &'a ExperimentConfig,
    pub train: &'a PairedDataset,
    pub test: &'a PairedDataset,
}

impl Evaluator<'_> {
    /// Metrics rows for one method's train and test embeddings.
    pub fn evaluate(&self, method: &str, train_emb: &EmbeddingSet, test_emb: &EmbeddingSet) -> Result<Vec<MetricRow>> {
        let eval = &self.cfg.eval;
        let seed = self.cfg.train.seed;
        let (nx, ny) = self.cfg.data.modality_names();
        let name = |d: SrlDirection| match d.train {
            crate::Modality::X => (nx, ny),
            crate::Modality::Y => (ny, nx),
        };
        let train_labels = self.train.labels()?;
        let test_labels = self.test.labels()?;
        let mut rows = Vec::new();
        for protocol in &eval.protocols {
            match protocol {
                Protocol::Srl => {
                    for dir in [SrlDirection::X_TO_Y, SrlDirection::Y_TO_X] {
                        let r = srl_evaluate(train_emb, train_labels, test_emb, test_labels, dir, &eval.logreg)?;
                        let (a, b) = name(dir);
                        rows.push(MetricRow::new(format!("{method}.srl_accuracy"), "test", r.accuracy, seed).directed(a, b));
                    }
                }
                Protocol::Correlation | Protocol::PearsonCorrelation => {
                    let (fx, fy) = (test_emb.get(crate::Modality::X)?, test_emb.get(crate::Modality::Y)?);
                    let (metric, report) = if *protocol == Protocol::Correlation {
                        ("topk_correlation", topk_correlation(fx, fy, eval.correlation_k)?)
                    } else {
                        ("pearson_topk_correlation", pearson_per_dimension(fx, fy, eval.correlation_k)?)
                    };
                    rows.push(MetricRow::new(
                        format!("{method}.{metric}@{}", eval.correlation_k),
                        "test",
                        report.top_k_sum,
                        seed,
                    ));
                }
                Protocol::LabelEfficiency => {
                    let sizes: Vec<usize> = eval.label_sizes.iter().map(|&s| s.min(train_labels.len())).collect();
                    for dir in [SrlDirection::X_TO_Y, SrlDirection::Y_TO_X] {
                        let curve = label_efficiency_curve(
                            train_emb,
                            train_labels,
                            test_emb,
                            test_labels,
                            dir,
                            &sizes,
                            eval.label_seed,
                            &eval.logreg,
                        )?;
                        let (a, b) = name(dir);
                        for r in curve {
                            rows.push(
                                MetricRow::new(format!("{method}.srl_accuracy@{}", r.n_labeled), "test", r.accuracy, seed)
                                    .directed(a, b),
                            );
                        }
                    }
                }
            }
        }
        Ok(rows)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub metrics: Vec<MetricRow>,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub cca_correlations: Option<Vec<f64>>,
    /// Paths written, relative to `out_dir`.
    pub files: Vec<String>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn embeddings(&mut self, method: &str, split: &str, emb: &EmbeddingSet, text: bool) -> Result<()> {
        for (view, m) in [("x", &emb.fx), ("y", &emb.fy)] {
            if let Some(m) = m {
                write_matrix_bin(self.path(&format!("embeddings/{method}_{split}_{view}.bin")), m)?;
                if text {
                    write_matrix_text(self.path(&format!("embeddings/{method}_{split}_{view}.txt")), m)?;
                }
            }
        }
        Ok(())
    }
}

fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut s = String::from("epoch,pairing,disc_loss,gen_adv_loss,disc_accuracy,valid_objective\n");
    for h in history {
        let valid = h.valid_objective.map_or(String::new(), |v| format!("{v:.6}"));
        s += &format!(
            "{},{:.6},{:.6},{:.6},{:.6},{valid}\n",
            h.epoch, h.pairing, h.disc_loss, h.gen_adv_loss, h.disc_accuracy
        );
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Runs the configured methods and protocols on already-loaded data.
pub fn run_with_data(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<RunSummary> {
    run_with_data_observed(cfg, data, &mut |_| {})
}

/// [`run_with_data`] that reports each DeMIAN training epoch to `observer`.
pub fn run_with_data_observed(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<RunSummary> {
    cfg.validate()?;
    let mut out = Outputs {
        dir: ensure_dir(&cfg.out_dir)?,
        files: Vec::new(),
    };
    let evaluating = !cfg.eval.protocols.is_empty();
    if evaluating && cfg.eval.export_embeddings {
        ensure_dir(cfg.out_dir.join("embeddings"))?;
    }
    std::fs::write(out.path("config.toml"), cfg.to_toml())?;
    let evaluator = Evaluator {
        cfg,
        train: &data.train,
        test: &data.test,
    };
    let mut metrics = Vec::new();
    let mut history = Vec::new();
    let mut best_epoch = None;
    let mut cca_correlations = None;
    for method in &cfg.eval.methods {
        let (train_emb, test_emb) = match method {
            Method::Demian => {
                let trained =
                    train_demian_observed(&data.train, data.valid.as_ref(), &cfg.model, &cfg.train, observer)?;
                save_checkpoint(out.path("demian.ckpt"), &demian_checkpoint(&trained, &cfg.model))?;
                write_history(&out.path("history.csv"), &trained.history)?;
                history = trained.history.clone();
                best_epoch = trained.best_epoch;
                if !evaluating {
                    continue;
                }
                let g = trained.generators();
                (
                    g.embed(Some(&data.train.x), Some(&data.train.y))?,
                    g.embed(Some(&data.test.x), Some(&data.test.y))?,
                )
            }
            Method::Cca => {
                let model = fit_cca(&data.train.x, &data.train.y, cfg.eval.cca_components, cfg.eval.cca_ridge)?;
                write_cca(&mut out, &model)?;
                cca_correlations = Some(model.correlations.clone());
                if !evaluating {
                    continue;
                }
                (
                    cca_project(&model, Some(&data.train.x), Some(&data.train.y))?,
                    cca_project(&model, Some(&data.test.x), Some(&data.test.y))?,
                )
            }
        };
        if cfg.eval.export_embeddings {
            out.embeddings(method.name(), "train", &train_emb, cfg.eval.export_text)?;
            out.embeddings(method.name(), "test", &test_emb, cfg.eval.export_text)?;
        }
        metrics.extend(evaluator.evaluate(method.name(), &train_emb, &test_emb)?);
    }
    if evaluating {
        write_metrics(out.path("metrics.csv"), &metrics)?;
    }
    out.files.push("summary.json".into());
    let summary = RunSummary {
        out_dir: cfg.out_dir.clone(),
        n_train: data.train.len(),
        n_valid: data.valid.as_ref().map_or(0, PairedDataset::len),
        n_test: data.test.len(),
        metrics,
        history,
        best_epoch,
        cca_correlations,
        files: out.files.clone(),
    };
    write_json(cfg.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn write_cca(out: &mut Outputs, model: &CcaModel) -> Result<()> {
    write_matrix_bin(out.path("cca_wx.bin"), &model.wx)?;
    write_matrix_bin(out.path("cca_wy.bin"), &model.wy)?;
    write_matrix_bin(out.path("cca_mean_x.bin"), &crate::Matrix::row_vector(&model.mean_x))?;
    write_matrix_bin(out.path("cca_mean_y.bin"), &crate::Matrix::row_vector(&model.mean_y))?;
    Ok(())
}

/// Loads the configured data and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    run_experiment_observed(cfg, &mut |_| {})
}

pub fn run_experiment_observed(cfg: &ExperimentConfig, observer: &mut dyn FnMut(&EpochStats)) -> Result<RunSummary> {
    cfg.validate()?;
    let data = load_data(&cfg.data)?;
    run_with_data_observed(cfg, &data, observer)
}
