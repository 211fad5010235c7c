use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PairedDataset;
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::Mode;
use crate::nn::{softmax_cross_entropy_over, GaussianPrior};
use crate::optim::{Adam, AdamConfig};

use super::losses::{adversarial_losses, pairing_loss, LABEL_PRIOR, LABEL_X, LABEL_Y};
use super::{Architecture, GeneratorPair, ModalityDiscriminator, TrainConfig};

// Independent RNG streams derived from the one configured seed.
const STREAM_INIT: u64 = 1;
const STREAM_PRIOR: u64 = 2;
const STREAM_DISC_BATCHES: u64 = 3;
const STREAM_GEN_BATCHES: u64 = 4;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Losses observed during one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    pub pairing: f64,
    pub disc_loss: f64,
    pub gen_adv_loss: f64,
    pub disc_accuracy: f64,
}

/// Per-epoch means. Pairing and generator-adversarial terms come from the
/// generator updates, discriminator loss and accuracy from the discriminator
/// updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub pairing: f64,
    pub disc_loss: f64,
    pub gen_adv_loss: f64,
    pub disc_accuracy: f64,
    pub valid_objective: Option<f64>,
}

/// The generators, the discriminator and their optimizers.
#[derive(Clone, Debug)]
pub struct Demian {
    pub generators: GeneratorPair,
    pub discriminator: ModalityDiscriminator,
    cfg: TrainConfig,
    opt_gx: Adam,
    opt_gy: Adam,
    opt_d: Adam,
    prior: GaussianPrior,
}

impl Demian {
    pub fn new(arch: &Architecture, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        arch.validate()?;
        let mut rng = stream_rng(cfg.seed, STREAM_INIT);
        let generators = GeneratorPair::new(arch, cfg.bn_ema_rate, &mut rng)?;
        let discriminator =
            ModalityDiscriminator::new(arch.d_z(), &arch.disc_hidden, cfg.use_prior, &mut rng)?;
        let adam = AdamConfig {
            lr: cfg.alpha,
            beta1: cfg.beta1,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        };
        let mut prior_rng = stream_rng(cfg.seed, STREAM_PRIOR);
        let prior_seed = rand::Rng::random(&mut prior_rng);
        Ok(Demian {
            generators,
            discriminator,
            cfg: cfg.clone(),
            opt_gx: Adam::new(adam),
            opt_gy: Adam::new(adam),
            opt_d: Adam::new(AdamConfig {
                lr: cfg.disc_alpha.unwrap_or(cfg.alpha),
                ..adam
            }),
            prior: GaussianPrior::new(arch.d_z(), prior_seed),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One discriminator update on a paired batch plus an equally sized prior
    /// batch, with the generators held fixed.
    pub fn discriminator_step(&mut self, x: &Matrix, y: &Matrix) -> Result<StepReport> {
        let fx = self.generators.gx.forward(x, Mode::Train)?;
        let fy = self.generators.gy.forward(y, Mode::Train)?;
        let z = self.cfg.use_prior.then(|| self.prior.sample(fx.rows()));
        self.discriminator.net.zero_grads();
        let adv = adversarial_losses(&mut self.discriminator, &fx, &fy, z.as_ref())?;
        self.opt_d.step_network(&mut self.discriminator.net)?;
        self.discriminator.net.zero_grads();
        Ok(StepReport {
            pairing: f64::NAN,
            disc_loss: adv.disc_loss,
            gen_adv_loss: adv.gen_adv_loss,
            disc_accuracy: adv.accuracy,
        })
    }

    /// One generator update minimising `J + lambda * gen_adv_loss` with the
    /// discriminator held fixed.
    pub fn generator_step(&mut self, x: &Matrix, y: &Matrix) -> Result<StepReport> {
        self.generator_step_terms(x, y, true)
    }

    /// Generator update with the pairing term optionally switched off, which
    /// isolates the adversarial direction.
    pub fn generator_step_terms(
        &mut self,
        x: &Matrix,
        y: &Matrix,
        with_pairing: bool,
    ) -> Result<StepReport> {
        let fx = self.generators.gx.forward(x, Mode::Train)?;
        let fy = self.generators.gy.forward(y, Mode::Train)?;
        let pair = pairing_loss(&fx, &fy, self.cfg.distance)?;
        let adv = adversarial_losses(&mut self.discriminator, &fx, &fy, None)?;
        // the discriminator only served as a fixed critic here
        self.discriminator.net.zero_grads();

        let lambda = self.cfg.lambda;
        let (mut gx, mut gy) = if with_pairing {
            (pair.grad_x, pair.grad_y)
        } else {
            (Matrix::zeros(fx.rows(), fx.cols()), Matrix::zeros(fy.rows(), fy.cols()))
        };
        gx.axpy(lambda, &adv.grad_fx)?;
        gy.axpy(lambda, &adv.grad_fy)?;

        let gens = &mut self.generators;
        gens.gx.zero_grads();
        gens.gx.backward(&gx)?;
        self.opt_gx.step_network(&mut gens.gx)?;
        gens.gx.zero_grads();
        gens.gy.zero_grads();
        gens.gy.backward(&gy)?;
        self.opt_gy.step_network(&mut gens.gy)?;
        gens.gy.zero_grads();

        Ok(StepReport {
            pairing: pair.loss,
            disc_loss: f64::NAN,
            gen_adv_loss: adv.gen_adv_loss,
            disc_accuracy: adv.accuracy,
        })
    }

    pub fn embed(&self, x: Option<&Matrix>, y: Option<&Matrix>) -> Result<EmbeddingSet> {
        self.generators.embed(x, y)
    }

    /// Eval-mode losses on a whole dataset without touching any state.
    /// Returns `(pairing, disc_loss, gen_adv_loss)`; the prior term is included
    /// when the model was trained with the prior.
    pub fn evaluate(&self, data: &PairedDataset, prior_seed: u64) -> Result<(f64, f64, f64)> {
        let emb = self.embed(Some(&data.x), Some(&data.y))?;
        let fx = emb.fx.expect("requested");
        let fy = emb.fy.expect("requested");
        let pairing = pairing_loss(&fx, &fy, self.cfg.distance)?.loss;
        let classes = self.discriminator.effective_classes();
        let group_mean = |m: &Matrix, label: usize| -> Result<f64> {
            let logits = self.discriminator.net.infer(m)?;
            let labels = vec![label; m.rows()];
            let (losses, _) = softmax_cross_entropy_over(&logits, &labels, classes)?;
            Ok(losses.iter().sum::<f64>() / m.rows().max(1) as f64)
        };
        let cx = group_mean(&fx, LABEL_X)?;
        let cy = group_mean(&fy, LABEL_Y)?;
        let mut disc = cx + cy;
        if self.cfg.use_prior {
            let z = GaussianPrior::new(self.generators.d_z(), prior_seed).sample(fx.rows());
            disc += group_mean(&z, LABEL_PRIOR)?;
        }
        Ok((pairing, disc, -(cx + cy)))
    }
}

struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        let mut s = BatchSampler {
            order: (0..n).collect(),
            pos: 0,
            rng,
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next(&mut self, m: usize) -> &[usize] {
        if self.pos + m > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = &self.order[self.pos..self.pos + m];
        self.pos += m;
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainedDemian {
    pub model: Demian,
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept when selecting on validation.
    pub best_epoch: Option<usize>,
}

impl TrainedDemian {
    pub fn generators(&self) -> &GeneratorPair {
        &self.model.generators
    }

    pub fn discriminator(&self) -> &ModalityDiscriminator {
        &self.model.discriminator
    }
}

/// Alternating optimisation: per iteration, `k` discriminator updates on fresh
/// batches followed by one generator update on another fresh batch. An epoch
/// is `n / batch_size` generator updates.
pub fn train_demian(
    data: &PairedDataset,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<TrainedDemian> {
    train_demian_with_validation(data, None, arch, cfg)
}

pub fn train_demian_with_validation(
    data: &PairedDataset,
    valid: Option<&PairedDataset>,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<TrainedDemian> {
    train_demian_observed(data, valid, arch, cfg, &mut |_| {})
}

/// [`train_demian_with_validation`] that reports each finished epoch to `observer`.
pub fn train_demian_observed(
    data: &PairedDataset,
    valid: Option<&PairedDataset>,
    arch: &Architecture,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainedDemian> {
    let mut model = Demian::new(arch, cfg)?;
    let n = data.len();
    let m = cfg.batch_size;
    if n < m {
        return Err(Error::Config(format!(
            "dataset has {n} pairs, fewer than the batch size {m}"
        )));
    }
    if data.x.cols() != arch.gx[0] || data.y.cols() != arch.gy[0] {
        return Err(Error::Config(format!(
            "data widths ({}, {}) do not match generator inputs ({}, {})",
            data.x.cols(),
            data.y.cols(),
            arch.gx[0],
            arch.gy[0]
        )));
    }
    if cfg.select_best && valid.is_none() {
        return Err(Error::Config(
            "select_best needs a validation split".into(),
        ));
    }
    let mut disc_batches = BatchSampler::new(n, stream_rng(cfg.seed, STREAM_DISC_BATCHES));
    let mut gen_batches = BatchSampler::new(n, stream_rng(cfg.seed, STREAM_GEN_BATCHES));
    let iterations = n / m;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Demian)> = None;
    for epoch in 0..cfg.epochs {
        let mut acc = [0.0; 4];
        for it in 0..iterations {
            for _ in 0..cfg.k {
                let idx = disc_batches.next(m);
                let (x, y) = (data.x.select_rows(idx), data.y.select_rows(idx));
                let r = model.discriminator_step(&x, &y)?;
                if !r.disc_loss.is_finite() {
                    return Err(diverged(epoch, it, &r));
                }
                acc[2] += r.disc_loss / cfg.k as f64;
                acc[3] += r.disc_accuracy / cfg.k as f64;
            }
            let idx = gen_batches.next(m);
            let (x, y) = (data.x.select_rows(idx), data.y.select_rows(idx));
            let r = model.generator_step(&x, &y)?;
            if !r.pairing.is_finite() || !r.gen_adv_loss.is_finite() {
                return Err(diverged(epoch, it, &r));
            }
            acc[0] += r.pairing;
            acc[1] += r.gen_adv_loss;
        }
        let denom = iterations as f64;
        let valid_objective = match valid {
            Some(v) => {
                let (pairing, _, gen_adv) = model.evaluate(v, cfg.seed)?;
                Some(pairing + cfg.lambda * gen_adv)
            }
            None => None,
        };
        let stats = EpochStats {
            epoch,
            pairing: acc[0] / denom,
            disc_loss: acc[2] / denom,
            gen_adv_loss: acc[1] / denom,
            disc_accuracy: acc[3] / denom,
            valid_objective,
        };
        if cfg.select_best {
            let obj = valid_objective.expect("validation present");
            if best.as_ref().is_none_or(|(b, _, _)| obj < *b) {
                best = Some((obj, epoch, model.clone()));
            }
        }
        observer(&stats);
        history.push(stats);
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, Some(e)),
        None => (model, None),
    };
    Ok(TrainedDemian {
        model,
        history,
        best_epoch,
    })
}

fn diverged(epoch: usize, iteration: usize, r: &StepReport) -> Error {
    Error::Diverged {
        epoch,
        iteration,
        pairing: r.pairing,
        disc: r.disc_loss,
        gen_adv: r.gen_adv_loss,
    }
}
