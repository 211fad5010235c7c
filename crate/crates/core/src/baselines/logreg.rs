//! Multinomial logistic regression, trained full-batch with Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::ParamTensor;
use crate::nn::{argmax_rows, softmax_cross_entropy};
use crate::optim::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegConfig {
    /// L2 penalty `reg/2 · ‖W‖²`; the bias is not penalised.
    pub reg: f64,
    pub lr: f64,
    pub max_iter: usize,
    /// Stop once the full gradient norm drops below this.
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            reg: 1e-4,
            lr: 0.01,
            max_iter: 2000,
            tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRegModel {
    /// `d × classes`
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub reg: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogRegModel {
    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        let mut z = features.matmul(&self.weights)?;
        z.add_row_broadcast(&self.bias)?;
        Ok(z)
    }
}

pub fn fit_logreg(features: &Matrix, labels: &[usize], cfg: &LogRegConfig) -> Result<LogRegModel> {
    if labels.len() != features.rows() {
        return Err(Error::dim("fit_logreg", features.shape(), (labels.len(), 1)));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::Config(format!(
            "logistic regression needs at least two classes, the training set has {distinct}"
        )));
    }
    let d = features.cols();
    let mut w = ParamTensor::new(Matrix::zeros(d, classes), false);
    let mut b = ParamTensor::new(Matrix::zeros(1, classes), false);
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        beta1: 0.9,
        ..AdamConfig::default()
    });
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let mut logits = features.matmul(&w.value)?;
        logits.add_row_broadcast(b.value.as_slice())?;
        let (_, g) = softmax_cross_entropy(&logits, labels)?;
        w.grad = features.t_matmul(&g)?;
        w.grad.axpy(cfg.reg, &w.value)?;
        b.grad = Matrix::row_vector(&g.column_sums());
        grad_norm = (w.grad.frobenius_norm().powi(2) + b.grad.frobenius_norm().powi(2)).sqrt();
        if grad_norm < cfg.tol {
            break;
        }
        opt.step(&mut [&mut w, &mut b])?;
        iterations += 1;
    }
    if !w.value.is_finite() || !b.value.is_finite() {
        return Err(Error::Numeric("logistic regression diverged".into()));
    }
    Ok(LogRegModel {
        weights: w.value,
        bias: b.value.into_vec(),
        reg: cfg.reg,
        iterations,
        grad_norm,
    })
}

pub fn predict_logreg(model: &LogRegModel, features: &Matrix) -> Result<Vec<usize>> {
    Ok(argmax_rows(&model.logits(features)?, model.classes()))
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn separable_clusters_fit_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let x = Matrix::from_fn(200, 2, |i, _| {
            let c = if labels[i] == 0 { -3.0 } else { 3.0 };
            c + 0.5 * rng.sample::<f64, _>(StandardNormal)
        });
        let m = fit_logreg(&x, &labels, &LogRegConfig::default()).unwrap();
        assert_eq!(accuracy(&predict_logreg(&m, &x).unwrap(), &labels), 1.0);
    }

    #[test]
    fn heavy_regularisation_predicts_majority() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels: Vec<usize> = (0..300).map(|i| usize::from(i % 5 == 0)).collect();
        let x = Matrix::from_fn(300, 3, |i, _| labels[i] as f64 + rng.sample::<f64, _>(StandardNormal));
        let cfg = LogRegConfig {
            reg: 1e6,
            ..LogRegConfig::default()
        };
        let m = fit_logreg(&x, &labels, &cfg).unwrap();
        assert!(predict_logreg(&m, &x).unwrap().iter().all(|&p| p == 0));
    }

    #[test]
    fn single_class_is_config_error() {
        let x = Matrix::zeros(4, 2);
        assert!(matches!(
            fit_logreg(&x, &[1, 1, 1, 1], &LogRegConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn argmax_ignores_common_logit_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<usize> = (0..90).map(|i| i % 3).collect();
        let x = Matrix::from_fn(90, 2, |i, j| (labels[i] * (j + 1)) as f64 + rng.random_range(-0.5..0.5));
        let mut m = fit_logreg(&x, &labels, &LogRegConfig::default()).unwrap();
        let before = predict_logreg(&m, &x).unwrap();
        m.bias.iter_mut().for_each(|b| *b += 17.5);
        assert_eq!(predict_logreg(&m, &x).unwrap(), before);
    }
}
