//! Adversarial learning of modality-invariant representations from paired
//! data, with a linear CCA baseline and the evaluation protocols used to
//! compare them.

pub mod baselines;
pub mod config;
pub mod data;
pub mod demian;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod io;
pub mod matrix;
pub mod network;
pub mod nn;
pub mod optim;
pub mod selftest;

pub use embedding::{EmbeddingSet, Modality};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use network::{Mode, Network, ParamTensor};
pub use config::ExperimentConfig;
pub use data::PairedDataset;
pub use demian::{Architecture, Distance, GeneratorPair, ModalityDiscriminator, TrainConfig};
