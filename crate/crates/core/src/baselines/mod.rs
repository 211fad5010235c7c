//! Reference methods the learned representations are compared against.

mod cca;
mod logreg;

pub use cca::{cca_project, fit_cca, CcaModel, Ridge};
pub use logreg::{accuracy, fit_logreg, predict_logreg, LogRegConfig, LogRegModel};
