//! Built-in correctness checks: finite-difference gradients of every layer
//! and loss, plus small oracles for CCA, retrieval and the classifier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::baselines::{accuracy, fit_cca, fit_logreg, predict_logreg, LogRegConfig, Ridge};
use crate::data::planted_cca_views;
use crate::demian::{Distance, ModalityDiscriminator};
use crate::error::Result;
use crate::eval::cosine_retrieval_classify;
use crate::gradcheck::{check_adversarial, check_network, check_pairing};
use crate::io::MetricRow;
use crate::matrix::Matrix;
use crate::network::Network;
use crate::nn::{mlp, Activation, BatchNorm, Dense, Elu, Layer, Relu};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const GRADIENT_SEEDS: u64 = 20;
pub const PLANTED_CORRELATIONS: [f64; 3] = [0.9, 0.5, 0.1];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `value` must not exceed this (or reach it, for accuracies).
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            passed: value < threshold,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            passed: value >= threshold,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Standard normals pushed at least 0.1 away from zero, clear of the ReLU kink.
fn off_kink(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    gaussian(rng, rows, cols).map(|v| v + 0.1 * v.signum())
}

/// Builds a small network for `seed` and returns `(net, input)`.
pub type NetworkCase = fn(&mut ChaCha8Rng) -> (Network, Matrix);

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(3..7), rng.random_range(2..6), rng.random_range(2..6))
}

fn one_layer(layer: Layer, input: Matrix) -> (Network, Matrix) {
    let width = input.cols();
    (Network::new(width).with(layer).expect("width matches"), input)
}

pub fn network_cases() -> Vec<(&'static str, NetworkCase)> {
    vec![
        ("dense", |rng| {
            let (n, i, o) = dims(rng);
            let mut d = Dense::new(i, o, rng);
            d.bias.value = gaussian(rng, 1, o);
            one_layer(Layer::Dense(d), gaussian(rng, n, i))
        }),
        ("relu", |rng| {
            let (n, i, _) = dims(rng);
            one_layer(Layer::Relu(Relu::default()), off_kink(rng, n, i))
        }),
        ("elu", |rng| {
            let (n, i, _) = dims(rng);
            one_layer(Layer::Elu(Elu::default()), off_kink(rng, n, i))
        }),
        ("batchnorm", |rng| {
            let (n, i, _) = dims(rng);
            let mut bn = BatchNorm::new(i);
            bn.gamma.value = gaussian(rng, 1, i);
            bn.beta.value = gaussian(rng, 1, i);
            one_layer(Layer::BatchNorm(bn), gaussian(rng, n, i))
        }),
        ("mlp_relu_bn", |rng| {
            let (n, i, o) = dims(rng);
            let net = mlp(&[i, 5, 4, o], Activation::Relu, true, 0.1, rng).expect("valid widths");
            (net, gaussian(rng, n, i))
        }),
        ("mlp_elu_bn", |rng| {
            let (n, i, o) = dims(rng);
            let net = mlp(&[i, 5, 4, o], Activation::Elu, true, 0.1, rng).expect("valid widths");
            (net, gaussian(rng, n, i))
        }),
    ]
}

/// Worst relative error of a network case over `seeds` seeds.
pub fn network_case_error(case: NetworkCase, seeds: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut net, input) = case(&mut rng);
        let probe = gaussian(&mut rng, input.rows(), net.out_width());
        worst = worst.max(check_network(&mut net, &input, &probe)?.worst());
    }
    Ok(worst)
}

pub fn pairing_error(kind: Distance, seeds: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, _) = dims(&mut rng);
        let fx = gaussian(&mut rng, n, d);
        let fy = gaussian(&mut rng, n, d);
        worst = worst.max(check_pairing(&fx, &fy, kind)?);
    }
    Ok(worst)
}

pub fn adversarial_error(use_prior: bool, seeds: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, h) = dims(&mut rng);
        let mut disc = ModalityDiscriminator::new(d, &[h + 2], use_prior, &mut rng)?;
        let fx = gaussian(&mut rng, n, d);
        let fy = gaussian(&mut rng, n + 1, d);
        let z = use_prior.then(|| gaussian(&mut rng, n, d));
        worst = worst.max(check_adversarial(&mut disc, &fx, &fy, z.as_ref())?);
    }
    Ok(worst)
}

/// Largest deviation of recovered from planted canonical correlations.
pub fn planted_cca_error(n: usize, seed: u64) -> Result<f64> {
    let (x, y) = planted_cca_views(n, 5, 4, &PLANTED_CORRELATIONS, seed)?;
    let m = fit_cca(&x, &y, 3, Ridge::default())?;
    Ok(m
        .correlations
        .iter()
        .zip(PLANTED_CORRELATIONS)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Two unit class vectors 60° apart; queries within 20° of one of them.
pub fn retrieval_accuracy(queries_per_class: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angles = [0.0f64, 60f64.to_radians()];
    let classes = Matrix::from_fn(2, 2, |c, j| if j == 0 { angles[c].cos() } else { angles[c].sin() });
    let mut truth = Vec::new();
    let mut rows = Vec::new();
    for (c, a) in angles.iter().enumerate() {
        for _ in 0..queries_per_class {
            let t = a + rng.random_range(-20f64.to_radians()..20f64.to_radians());
            let r = rng.random_range(0.1..10.0);
            rows.push([r * t.cos(), r * t.sin()]);
            truth.push(c);
        }
    }
    let preds = cosine_retrieval_classify(&Matrix::from_rows(&rows), &classes, &[0, 1])?;
    let predicted: Vec<usize> = preds.iter().map(|p| p.class_id.unwrap_or(usize::MAX)).collect();
    Ok(accuracy(&predicted, &truth))
}

fn separable_logreg_accuracy(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
    let centers = [[-4.0, 0.0], [4.0, 0.0], [0.0, 6.0]];
    let x = Matrix::from_fn(300, 2, |i, j| centers[labels[i]][j] + 0.5 * rng.sample::<f64, _>(StandardNormal));
    let m = fit_logreg(&x, &labels, &LogRegConfig::default())?;
    Ok(accuracy(&predict_logreg(&m, &x)?, &labels))
}

pub fn run_selftest() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (name, case) in network_cases() {
        let e = network_case_error(case, GRADIENT_SEEDS)?;
        checks.push(Check::at_most(&format!("grad.{name}"), e, GRADIENT_TOLERANCE));
    }
    for (name, kind) in [("l2sq", Distance::SquaredL2), ("cosine", Distance::Cosine)] {
        let e = pairing_error(kind, GRADIENT_SEEDS)?;
        checks.push(Check::at_most(&format!("grad.pairing_{name}"), e, GRADIENT_TOLERANCE));
    }
    for (name, prior) in [("adversarial_prior", true), ("adversarial_no_prior", false)] {
        let e = adversarial_error(prior, GRADIENT_SEEDS)?;
        checks.push(Check::at_most(&format!("grad.{name}"), e, GRADIENT_TOLERANCE));
    }
    checks.push(Check::at_most("cca.planted_max_error", planted_cca_error(10_000, 0)?, 0.02));
    checks.push(Check::at_least("retrieval.geometric_accuracy", retrieval_accuracy(200, 0)?, 1.0));
    checks.push(Check::at_least("logreg.separable_accuracy", separable_logreg_accuracy(0)?, 1.0));
    Ok(checks)
}

pub fn checks_to_metrics(checks: &[Check]) -> Vec<MetricRow> {
    checks
        .iter()
        .map(|c| MetricRow::new(format!("selftest.{}", c.name), "-", c.value, 0))
        .collect()
}
