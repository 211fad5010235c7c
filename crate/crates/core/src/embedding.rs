use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One of the two paired views.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    X,
    Y,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::X => Modality::Y,
            Modality::Y => Modality::X,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::X => "x",
            Modality::Y => "y",
        })
    }
}

/// Representations of one dataset split in the shared space.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub fx: Option<Matrix>,
    pub fy: Option<Matrix>,
    /// Which model produced these, e.g. `"demian"` or `"cca"`.
    pub source: String,
}

impl EmbeddingSet {
    pub fn new(source: impl Into<String>, fx: Option<Matrix>, fy: Option<Matrix>) -> Self {
        EmbeddingSet {
            fx,
            fy,
            source: source.into(),
        }
    }

    pub fn get(&self, m: Modality) -> Result<&Matrix> {
        match m {
            Modality::X => self.fx.as_ref(),
            Modality::Y => self.fy.as_ref(),
        }
        .ok_or_else(|| {
            Error::Input(format!(
                "{} embedding set has no modality-{m} embeddings",
                self.source
            ))
        })
    }

    pub fn dim(&self) -> Option<usize> {
        self.fx.as_ref().or(self.fy.as_ref()).map(Matrix::cols)
    }
}
