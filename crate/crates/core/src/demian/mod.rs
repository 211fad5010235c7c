//! The adversarial modality-invariant model.
//!
//! Two generators map each view into a shared `d_z`-dimensional space. A
//! three-way discriminator tries to tell generated x-embeddings, generated
//! y-embeddings and standard-normal prior samples apart; the generators are
//! trained to pull pairs together while maximising the discriminator's
//! cross-entropy (gradient reversal scaled by `lambda`).

mod losses;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::Network;
use crate::nn::{mlp, Activation, BatchNorm, Layer, BN_EMA_RATE, BN_EPSILON};

pub use losses::{
    adversarial_losses, pairing_loss, AdversarialLosses, PairingLoss, COSINE_EPS, LABEL_PRIOR,
    LABEL_X, LABEL_Y,
};
pub use train::{
    train_demian, train_demian_observed, train_demian_with_validation, Demian, EpochStats, StepReport,
    TrainedDemian,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distance {
    #[serde(rename = "l2sq")]
    SquaredL2,
    #[serde(rename = "cosine")]
    Cosine,
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2sq" => Ok(Distance::SquaredL2),
            "cosine" => Ok(Distance::Cosine),
            other => Err(Error::Config(format!(
                "unknown distance {other:?}, expected l2sq or cosine"
            ))),
        }
    }
}

/// Layer widths of the two generators and the discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    /// Widths of `G_x` including its input, e.g. `[392, 1000, 50]`.
    pub gx: Vec<usize>,
    pub gy: Vec<usize>,
    /// Hidden widths of the discriminator; its input is `d_z` and output 3.
    pub disc_hidden: Vec<usize>,
    pub activation: Activation,
    /// Batch-normalize the generator outputs, which keeps every embedding
    /// dimension on the scale of the unit Gaussian prior.
    pub output_norm: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            gx: vec![392, 1000, 50],
            gy: vec![392, 1000, 50],
            disc_hidden: vec![1000],
            activation: Activation::Relu,
            output_norm: true,
        }
    }
}

impl Architecture {
    pub fn d_z(&self) -> usize {
        *self.gx.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gx.len() < 2 || self.gy.len() < 2 {
            return Err(Error::Config(
                "each generator needs at least an input and an output width".into(),
            ));
        }
        if self.gx.last() != self.gy.last() {
            return Err(Error::Config(format!(
                "generators disagree on the shared dimension: {:?} vs {:?}",
                self.gx.last(),
                self.gy.last()
            )));
        }
        if self.gx.iter().chain(&self.gy).chain(&self.disc_hidden).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Hyperparameters of the alternating optimisation. Defaults are the MNIST settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the adversarial term in the generator objective.
    pub lambda: f64,
    /// Discriminator updates per generator update.
    pub k: usize,
    /// Adam learning rate.
    pub alpha: f64,
    pub beta1: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub distance: Distance,
    pub use_prior: bool,
    pub seed: u64,
    pub bn_ema_rate: f64,
    /// Discriminator learning rate; `alpha` when unset.
    pub disc_alpha: Option<f64>,
    /// Keep the epoch with the lowest validation objective instead of the last one.
    pub select_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 5.0,
            k: 1,
            alpha: 2e-4,
            beta1: 0.5,
            weight_decay: 1e-3,
            batch_size: 500,
            epochs: 50,
            distance: Distance::SquaredL2,
            use_prior: true,
            seed: 0,
            bn_ema_rate: BN_EMA_RATE,
            disc_alpha: None,
            select_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        let positive = |v: f64| v > 0.0;
        if !positive(self.alpha)
            || self.disc_alpha.is_some_and(|a| !positive(a))
            || !(0.0..1.0).contains(&self.beta1)
            || self.weight_decay < 0.0
        {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_ema_rate) {
            return Err(Error::Config("bn_ema_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorPair {
    pub gx: Network,
    pub gy: Network,
    pub activation: Activation,
}

impl GeneratorPair {
    pub fn new(arch: &Architecture, ema_rate: f64, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut build = |widths: &[usize]| -> Result<Network> {
            let mut net = mlp(widths, arch.activation, true, ema_rate, rng)?;
            if arch.output_norm {
                let d_z = net.out_width();
                net.push(Layer::BatchNorm(BatchNorm::with_rates(d_z, ema_rate, BN_EPSILON)))?;
            }
            Ok(net)
        };
        Ok(GeneratorPair {
            gx: build(&arch.gx)?,
            gy: build(&arch.gy)?,
            activation: arch.activation,
        })
    }

    pub fn d_z(&self) -> usize {
        self.gx.out_width()
    }

    /// Eval-mode embedding of whichever views are given.
    pub fn embed(&self, x: Option<&Matrix>, y: Option<&Matrix>) -> Result<EmbeddingSet> {
        if x.is_none() && y.is_none() {
            return Err(Error::Input("embed needs at least one modality".into()));
        }
        let fx = x.map(|x| self.gx.infer(x)).transpose()?;
        let fy = y.map(|y| self.gy.infer(y)).transpose()?;
        Ok(EmbeddingSet::new("demian", fx, fy))
    }
}

/// Three-way classifier over {x-embedding, y-embedding, prior sample}.
#[derive(Clone, Debug)]
pub struct ModalityDiscriminator {
    pub net: Network,
    pub use_prior: bool,
}

impl ModalityDiscriminator {
    pub const CLASSES: usize = 3;

    pub fn new(d_z: usize, hidden: &[usize], use_prior: bool, rng: &mut impl Rng) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(d_z);
        widths.extend_from_slice(hidden);
        widths.push(Self::CLASSES);
        Ok(ModalityDiscriminator {
            net: mlp(&widths, Activation::Relu, false, BN_EMA_RATE, rng)?,
            use_prior,
        })
    }

    /// Classes the softmax ranges over: all three with the prior, x and y otherwise.
    pub fn effective_classes(&self) -> usize {
        if self.use_prior {
            3
        } else {
            2
        }
    }
}

/// Eval-mode embedding of whichever views are given.
pub fn embed(gen: &GeneratorPair, x: Option<&Matrix>, y: Option<&Matrix>) -> Result<EmbeddingSet> {
    gen.embed(x, y)
}
