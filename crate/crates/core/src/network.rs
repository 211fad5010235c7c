//! Sequential layer stacks with explicit forward and backward passes.
//!
//! There is no tape: every architecture in this crate is a fixed stack, so
//! each layer caches what its own backward needs during a `Train` forward.
//! Gradients accumulate into [`ParamTensor::grad`] until [`Network::zero_grads`].

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Layer;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable parameter block and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub value: Matrix,
    pub grad: Matrix,
    /// Whether L2 weight decay applies to this block.
    pub decay: bool,
}

impl ParamTensor {
    pub fn new(value: Matrix, decay: bool) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        ParamTensor { value, grad, decay }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    in_width: usize,
    out_width: usize,
    layers: Vec<Layer>,
    /// Output shape of the last `Train` forward; `None` when backward is not allowed.
    train_output: Option<(usize, usize)>,
}

impl Network {
    /// An empty stack, which is the identity on `width`-wide inputs.
    pub fn new(width: usize) -> Self {
        Network {
            in_width: width,
            out_width: width,
            layers: Vec::new(),
            train_output: None,
        }
    }

    /// Appends a layer, checking that its input width chains onto the stack.
    pub fn push(&mut self, layer: Layer) -> Result<()> {
        let out = match layer.widths() {
            Some((i, o)) => {
                if i != self.out_width {
                    return Err(Error::Config(format!(
                        "layer {} expects width {i} but the stack produces {}",
                        layer.name(),
                        self.out_width
                    )));
                }
                o
            }
            None => self.out_width,
        };
        self.layers.push(layer);
        self.out_width = out;
        self.train_output = None;
        Ok(())
    }

    pub fn with(mut self, layer: Layer) -> Result<Self> {
        self.push(layer)?;
        Ok(self)
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.train_output = None;
        &mut self.layers
    }

    pub fn forward(&mut self, input: &Matrix, mode: Mode) -> Result<Matrix> {
        self.check_input(input)?;
        match mode {
            Mode::Eval => {
                self.train_output = None;
                self.infer(input)
            }
            Mode::Train => {
                self.train_output = None;
                let mut x = input.clone();
                for layer in &mut self.layers {
                    x = layer.forward_train(&x)?;
                }
                self.train_output = Some(x.shape());
                Ok(x)
            }
        }
    }

    /// Eval-mode forward through a shared reference; never mutates anything,
    /// so disjoint batches may be embedded from several threads.
    pub fn infer(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward_eval(&x)?;
        }
        Ok(x)
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the input of the most recent `Train` forward.
    pub fn backward(&mut self, output_grad: &Matrix) -> Result<Matrix> {
        let shape = self.train_output.ok_or_else(|| {
            Error::State("backward called without a preceding Train-mode forward".into())
        })?;
        if output_grad.shape() != shape {
            return Err(Error::dim("backward", shape, output_grad.shape()));
        }
        let mut g = output_grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.as_slice().len()).sum()
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.in_width {
            return Err(Error::dim(
                "network forward",
                (input.rows(), self.in_width),
                input.shape(),
            ));
        }
        Ok(())
    }
}
