//! Concrete layers, the softmax cross-entropy head and the Gaussian prior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::{Network, ParamTensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_EMA_RATE: f64 = 0.1;
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
}

/// Affine map `x·W + b` with `W` of shape `in × out`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
    input: Option<Matrix>,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new(in_width: usize, out_width: usize, rng: &mut impl Rng) -> Self {
        let limit = if in_width + out_width == 0 {
            0.0
        } else {
            (6.0 / (in_width + out_width) as f64).sqrt()
        };
        let w = Matrix::from_fn(in_width, out_width, |_, _| {
            if limit > 0.0 {
                rng.random_range(-limit..limit)
            } else {
                0.0
            }
        });
        Dense::from_parts(w, vec![0.0; out_width]).expect("shapes agree by construction")
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::dim("dense bias", weight.shape(), (1, bias.len())));
        }
        Ok(Dense {
            weight: ParamTensor::new(weight, true),
            bias: ParamTensor::new(Matrix::row_vector(&bias), true),
            input: None,
        })
    }

    pub fn in_width(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_width(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weight.value)?;
        y.add_row_broadcast(self.bias.value.as_slice())?;
        Ok(y)
    }

    fn backward(&mut self, g: &Matrix) -> Result<Matrix> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::State("dense backward without cached input".into()))?;
        let dw = x.t_matmul(g)?;
        self.weight.grad.add_assign(&dw)?;
        for (b, s) in self.bias.grad.as_mut_slice().iter_mut().zip(g.column_sums()) {
            *b += s;
        }
        g.matmul_t(&self.weight.value)
    }
}

pub fn relu_forward(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

pub fn elu_forward(x: &Matrix, alpha: f64) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { alpha * v.exp_m1() })
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    input: Option<Matrix>,
}

#[derive(Clone, Debug)]
pub struct Elu {
    pub alpha: f64,
    input: Option<Matrix>,
}

impl Elu {
    pub fn new(alpha: f64) -> Self {
        Elu { alpha, input: None }
    }
}

impl Default for Elu {
    fn default() -> Self {
        Elu::new(ELU_ALPHA)
    }
}

/// Per-column batch normalisation with learnable scale and shift.
///
/// Train mode normalises with the batch's population variance and folds the
/// batch mean and unbiased variance into the running statistics by EMA.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamTensor,
    pub beta: ParamTensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub ema_rate: f64,
    pub epsilon: f64,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    x_hat: Matrix,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        BatchNorm::with_rates(width, BN_EMA_RATE, BN_EPSILON)
    }

    pub fn with_rates(width: usize, ema_rate: f64, epsilon: f64) -> Self {
        BatchNorm {
            gamma: ParamTensor::new(Matrix::filled(1, width, 1.0), false),
            beta: ParamTensor::new(Matrix::zeros(1, width), false),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            ema_rate,
            epsilon,
            cache: None,
        }
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.width() {
            return Err(Error::dim("batchnorm", (x.rows(), self.width()), x.shape()));
        }
        Ok(())
    }

    pub fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let n = x.rows();
        if n < 2 {
            return Err(Error::Config(format!(
                "batch normalisation in Train mode needs a batch of at least 2, got {n}"
            )));
        }
        let mean = x.column_means();
        let var = x.column_variances();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let gamma = self.gamma.value.as_slice();
        let beta = self.beta.value.as_slice();
        let mut x_hat = Matrix::zeros(n, x.cols());
        let mut y = Matrix::zeros(n, x.cols());
        for i in 0..n {
            let xr = x.row(i);
            let hr = x_hat.row_mut(i);
            for j in 0..xr.len() {
                hr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let yr = y.row_mut(i);
            for j in 0..yr.len() {
                yr[j] = gamma[j] * x_hat.get(i, j) + beta[j];
            }
        }
        let unbias = n as f64 / (n - 1) as f64;
        let r = self.ema_rate;
        for j in 0..self.width() {
            self.running_mean[j] = (1.0 - r) * self.running_mean[j] + r * mean[j];
            self.running_var[j] = (1.0 - r) * self.running_var[j] + r * var[j] * unbias;
        }
        self.cache = Some(BnCache { x_hat, inv_std });
        Ok(y)
    }

    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let gamma = self.gamma.value.as_slice();
        let beta = self.beta.value.as_slice();
        let scale: Vec<f64> = self
            .running_var
            .iter()
            .zip(gamma)
            .map(|(v, g)| g / (v + self.epsilon).sqrt())
            .collect();
        let mut y = x.clone();
        for i in 0..y.rows() {
            for (j, v) in y.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.running_mean[j]) * scale[j] + beta[j];
            }
        }
        Ok(y)
    }

    fn backward(&mut self, g: &Matrix) -> Result<Matrix> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("batchnorm backward without cached batch".into()))?;
        let (n, w) = g.shape();
        let gamma = self.gamma.value.as_slice();
        let mut sum_dxhat = vec![0.0; w];
        let mut sum_dxhat_xhat = vec![0.0; w];
        {
            let dgamma = self.gamma.grad.as_mut_slice();
            let dbeta = self.beta.grad.as_mut_slice();
            for i in 0..n {
                let gr = g.row(i);
                let hr = cache.x_hat.row(i);
                for j in 0..w {
                    dgamma[j] += gr[j] * hr[j];
                    dbeta[j] += gr[j];
                    let d = gr[j] * gamma[j];
                    sum_dxhat[j] += d;
                    sum_dxhat_xhat[j] += d * hr[j];
                }
            }
        }
        let nf = n as f64;
        let mut dx = Matrix::zeros(n, w);
        for i in 0..n {
            let gr = g.row(i);
            let hr = cache.x_hat.row(i);
            let out = dx.row_mut(i);
            for j in 0..w {
                let d = gr[j] * gamma[j];
                out[j] = cache.inv_std[j] / nf
                    * (nf * d - sum_dxhat[j] - hr[j] * sum_dxhat_xhat[j]);
            }
        }
        Ok(dx)
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Dense(Dense),
    Relu(Relu),
    Elu(Elu),
    BatchNorm(BatchNorm),
}

impl Layer {
    pub fn activation(kind: Activation) -> Self {
        match kind {
            Activation::Relu => Layer::Relu(Relu::default()),
            Activation::Elu => Layer::Elu(Elu::default()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Relu(_) => "relu",
            Layer::Elu(_) => "elu",
            Layer::BatchNorm(_) => "batchnorm",
        }
    }

    /// `(input, output)` widths, or `None` for width-preserving elementwise layers.
    pub fn widths(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Dense(d) => Some((d.in_width(), d.out_width())),
            Layer::BatchNorm(b) => Some((b.width(), b.width())),
            Layer::Relu(_) | Layer::Elu(_) => None,
        }
    }

    pub fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Dense(d) => {
                let y = d.forward(x)?;
                d.input = Some(x.clone());
                Ok(y)
            }
            Layer::Relu(r) => {
                r.input = Some(x.clone());
                Ok(relu_forward(x))
            }
            Layer::Elu(e) => {
                e.input = Some(x.clone());
                Ok(elu_forward(x, e.alpha))
            }
            Layer::BatchNorm(b) => b.forward_train(x),
        }
    }

    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Relu(_) => Ok(relu_forward(x)),
            Layer::Elu(e) => Ok(elu_forward(x, e.alpha)),
            Layer::BatchNorm(b) => b.forward_eval(x),
        }
    }

    pub fn backward(&mut self, g: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Dense(d) => d.backward(g),
            Layer::Relu(r) => {
                let x = r
                    .input
                    .as_ref()
                    .ok_or_else(|| Error::State("relu backward without cached input".into()))?;
                x.zip_map(g, |v, d| if v > 0.0 { d } else { 0.0 })
            }
            Layer::Elu(e) => {
                let alpha = e.alpha;
                let x = e
                    .input
                    .as_ref()
                    .ok_or_else(|| Error::State("elu backward without cached input".into()))?;
                x.zip_map(g, |v, d| if v > 0.0 { d } else { d * alpha * v.exp() })
            }
            Layer::BatchNorm(b) => b.backward(g),
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Relu(_) | Layer::Elu(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Relu(_) | Layer::Elu(_) => Vec::new(),
        }
    }
}

/// Builds `Dense → activation → BatchNorm` for every hidden width and a bare
/// `Dense` for the last one. `widths` includes the input width.
pub fn mlp(
    widths: &[usize],
    activation: Activation,
    batch_norm: bool,
    ema_rate: f64,
    rng: &mut impl Rng,
) -> Result<Network> {
    if widths.len() < 2 {
        return Err(Error::Config(format!(
            "a network needs at least input and output widths, got {widths:?}"
        )));
    }
    let mut net = Network::new(widths[0]);
    let last = widths.len() - 2;
    for (i, pair) in widths.windows(2).enumerate() {
        net.push(Layer::Dense(Dense::new(pair[0], pair[1], rng)))?;
        if i < last {
            net.push(Layer::activation(activation))?;
            if batch_norm {
                net.push(Layer::BatchNorm(BatchNorm::with_rates(
                    pair[1],
                    ema_rate,
                    BN_EPSILON,
                )))?;
            }
        }
    }
    Ok(net)
}

/// Mean cross-entropy of a softmax over all columns of `logits`; the
/// returned gradient is `(softmax − onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (losses, grad) = softmax_cross_entropy_over(logits, labels, logits.cols())?;
    let n = labels.len().max(1) as f64;
    Ok((losses.iter().sum::<f64>() / n, grad))
}

/// Softmax cross-entropy restricted to the first `classes` logit columns.
///
/// Returns per-sample losses and the gradient of their mean; columns at or
/// beyond `classes` get exactly zero gradient.
pub fn softmax_cross_entropy_over(
    logits: &Matrix,
    labels: &[usize],
    classes: usize,
) -> Result<(Vec<f64>, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::dim(
            "softmax_cross_entropy",
            logits.shape(),
            (labels.len(), 1),
        ));
    }
    if classes == 0 || classes > logits.cols() {
        return Err(Error::Input(format!(
            "cannot take a softmax over {classes} of {} logits",
            logits.cols()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&t| t >= classes) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let n = logits.rows();
    let inv_n = 1.0 / n.max(1) as f64;
    let mut grad = Matrix::zeros(n, logits.cols());
    let mut losses = Vec::with_capacity(n);
    for (i, &t) in labels.iter().enumerate() {
        let row = &logits.row(i)[..classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        losses.push(lse - row[t]);
        let gr = grad.row_mut(i);
        for j in 0..classes {
            gr[j] = (row[j] - lse).exp() * inv_n;
        }
        gr[t] -= inv_n;
    }
    Ok((losses, grad))
}

/// Row-wise argmax over the first `classes` columns; ties go to the lower index.
pub fn argmax_rows(m: &Matrix, classes: usize) -> Vec<usize> {
    m.row_iter()
        .map(|r| {
            let mut best = 0;
            for j in 1..classes.min(r.len()) {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Source of i.i.d. standard-normal samples fed to the discriminator.
#[derive(Clone, Debug)]
pub struct GaussianPrior {
    dim: usize,
    rng: ChaCha8Rng,
}

impl GaussianPrior {
    pub fn new(dim: usize, seed: u64) -> Self {
        GaussianPrior {
            dim,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&mut self, batch: usize) -> Matrix {
        let data = (0..batch * self.dim)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        Matrix::from_vec(batch, self.dim, data).expect("length matches")
    }
}
