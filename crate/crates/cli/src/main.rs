use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use demian_core::config::{ExperimentConfig, Method};
use demian_core::data::SplitTag;
use demian_core::demian::EpochStats;
use demian_core::experiment::{generators_from_checkpoint, load_data, run_experiment_observed, Evaluator};
use demian_core::io::{ensure_dir, load_checkpoint, write_matrix_bin, write_matrix_text, write_metrics};
use demian_core::selftest::{checks_to_metrics, run_selftest};
use demian_core::Distance;

#[derive(Parser)]
#[command(name = "demian", version, about = "Modality-invariant representations from paired views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train DeMIAN (and the CCA baseline unless the config says otherwise) and evaluate.
    Train(RunArgs),
    /// Fit and evaluate only the linear CCA baseline.
    Cca(RunArgs),
    /// Evaluate a saved DeMIAN checkpoint.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write the embeddings of one data split using a saved checkpoint.
    Embed {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Also write whitespace-separated text files.
        #[arg(long)]
        text: bool,
    },
    /// Run gradient checks and small oracle suites.
    Selftest {
        #[arg(long, default_value = "runs/selftest")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    L2sq,
    Cosine,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train without the Gaussian prior class.
    #[arg(long)]
    no_prior: bool,
    #[arg(long, value_enum)]
    distance: Option<DistanceArg>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if self.no_prior {
            cfg.train.use_prior = false;
        }
        if let Some(d) = self.distance {
            cfg.train.distance = match d {
                DistanceArg::L2sq => Distance::SquaredL2,
                DistanceArg::Cosine => Distance::Cosine,
            };
        }
        if let Some(l) = self.lambda {
            cfg.train.lambda = l;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn log_epoch(total: usize) -> impl FnMut(&EpochStats) {
    let start = Instant::now();
    move |s| {
        let valid = s.valid_objective.map_or(String::new(), |v| format!(" valid={v:.4}"));
        eprintln!(
            "epoch {:>3}/{total} pairing={:.4} disc={:.4} gen_adv={:.4} disc_acc={:.3}{valid} [{:.0}s]",
            s.epoch + 1,
            s.pairing,
            s.disc_loss,
            s.gen_adv_loss,
            s.disc_accuracy,
            start.elapsed().as_secs_f64()
        );
    }
}

fn run(cfg: ExperimentConfig) -> Result<()> {
    let mut observer = log_epoch(cfg.train.epochs);
    let summary = run_experiment_observed(&cfg, &mut observer)?;
    for r in &summary.metrics {
        println!("{} {} {}->{} {:.4}", r.metric, r.split, r.train_modality, r.test_modality, r.value);
    }
    eprintln!("wrote {} files to {}", summary.files.len(), cfg.out_dir.display());
    Ok(())
}

fn checkpoint_generators(path: &Path) -> Result<demian_core::GeneratorPair> {
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(generators_from_checkpoint(&ck)?)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(args) => run(args.config()?)?,
        Command::Cca(args) => {
            let mut cfg = args.config()?;
            cfg.eval.methods = vec![Method::Cca];
            run(cfg)?;
        }
        Command::Eval { run, checkpoint } => {
            let cfg = run.config()?;
            let gen = checkpoint_generators(&checkpoint)?;
            let data = load_data(&cfg.data)?;
            let train = gen.embed(Some(&data.train.x), Some(&data.train.y))?;
            let test = gen.embed(Some(&data.test.x), Some(&data.test.y))?;
            let evaluator = Evaluator {
                cfg: &cfg,
                train: &data.train,
                test: &data.test,
            };
            let rows = evaluator.evaluate("demian", &train, &test)?;
            ensure_dir(&cfg.out_dir)?;
            write_metrics(cfg.out_dir.join("metrics.csv"), &rows)?;
            for r in &rows {
                println!("{} {} {}->{} {:.4}", r.metric, r.split, r.train_modality, r.test_modality, r.value);
            }
        }
        Command::Embed {
            run,
            checkpoint,
            split,
            text,
        } => {
            let cfg = run.config()?;
            let gen = checkpoint_generators(&checkpoint)?;
            let data = load_data(&cfg.data)?;
            let (set, tag) = match split {
                Split::Train => (&data.train, SplitTag::Train),
                Split::Test => (&data.test, SplitTag::Test),
                Split::Valid => match &data.valid {
                    Some(v) => (v, SplitTag::Valid),
                    None => bail!("the configuration holds out no validation split"),
                },
            };
            let emb = gen.embed(Some(&set.x), Some(&set.y))?;
            ensure_dir(&cfg.out_dir)?;
            for (view, m) in [("x", &emb.fx), ("y", &emb.fy)] {
                let m = m.as_ref().expect("both views embedded");
                let stem = cfg.out_dir.join(format!("demian_{tag}_{view}"));
                write_matrix_bin(stem.with_extension("bin"), m)?;
                if text {
                    write_matrix_text(stem.with_extension("txt"), m)?;
                }
            }
            eprintln!("wrote {} embeddings of {} pairs to {}", tag, set.len(), cfg.out_dir.display());
        }
        Command::Selftest { out } => {
            let checks = run_selftest()?;
            ensure_dir(&out)?;
            write_metrics(out.join("metrics.csv"), &checks_to_metrics(&checks))?;
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} {:<32} value={:e} threshold={:e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                );
                ok &= c.passed;
            }
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
