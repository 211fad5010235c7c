use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: bad magic number, expected {expected} found {found}")]
    Magic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated, expected {expected} bytes found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(
        "training diverged at epoch {epoch} iteration {iteration}: \
         pairing={pairing} disc={disc} gen_adv={gen_adv}"
    )]
    Diverged {
        epoch: usize,
        iteration: usize,
        pairing: f64,
        disc: f64,
        gen_adv: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Dimension { op, lhs, rhs }
    }
}
