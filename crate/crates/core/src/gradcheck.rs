//! Central finite-difference checks of analytic gradients.

use crate::demian::{adversarial_losses, pairing_loss, Distance, ModalityDiscriminator};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::network::{Mode, Network};

pub const FD_STEP: f64 = 1e-5;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every entry of `x`.
pub fn numeric_gradient(mut f: impl FnMut(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.as_slice().len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[i] = orig;
        out.as_mut_slice()[i] = (up - down) / (2.0 * h);
    }
    out
}

fn probe_loss(out: &Matrix, probe: &Matrix) -> f64 {
    out.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
}

/// Worst relative errors of a network's input and parameter gradients under
/// the scalar loss `Σ forward(x) ⊙ probe` in `Train` mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkCheck {
    pub input: f64,
    pub params: f64,
}

impl NetworkCheck {
    pub fn worst(&self) -> f64 {
        self.input.max(self.params)
    }
}

pub fn check_network(net: &mut Network, input: &Matrix, probe: &Matrix) -> Result<NetworkCheck> {
    net.zero_grads();
    net.forward(input, Mode::Train)?;
    let grad_in = net.backward(probe)?;
    let analytic: Vec<Matrix> = net.params().iter().map(|p| p.grad.clone()).collect();

    let mut err = |x: &Matrix| -> f64 {
        let out = net.forward(x, Mode::Train).expect("shape checked above");
        probe_loss(&out, probe)
    };
    let input_err = max_relative_error(&grad_in, &numeric_gradient(&mut err, input, FD_STEP));

    let mut param_err: f64 = 0.0;
    for (p, grad) in analytic.iter().enumerate() {
        for j in 0..grad.as_slice().len() {
            let orig = net.params()[p].value.as_slice()[j];
            let mut eval = |v: f64| {
                net.params_mut()[p].value.as_mut_slice()[j] = v;
                let out = net.forward(input, Mode::Train).expect("shape checked above");
                probe_loss(&out, probe)
            };
            let numeric = (eval(orig + FD_STEP) - eval(orig - FD_STEP)) / (2.0 * FD_STEP);
            eval(orig);
            param_err = param_err.max(relative_error(grad.as_slice()[j], numeric));
        }
    }
    Ok(NetworkCheck {
        input: input_err,
        params: param_err,
    })
}

/// Worst relative error of both pairing-loss input gradients.
pub fn check_pairing(fx: &Matrix, fy: &Matrix, kind: Distance) -> Result<f64> {
    let p = pairing_loss(fx, fy, kind)?;
    let nx = numeric_gradient(|m| pairing_loss(m, fy, kind).map_or(f64::NAN, |p| p.loss), fx, FD_STEP);
    let ny = numeric_gradient(|m| pairing_loss(fx, m, kind).map_or(f64::NAN, |p| p.loss), fy, FD_STEP);
    Ok(max_relative_error(&p.grad_x, &nx).max(max_relative_error(&p.grad_y, &ny)))
}

/// Worst relative error of the generator-side gradients of `gen_adv_loss`
/// and the discriminator parameter gradients of `disc_loss`.
pub fn check_adversarial(
    disc: &mut ModalityDiscriminator,
    fx: &Matrix,
    fy: &Matrix,
    z: Option<&Matrix>,
) -> Result<f64> {
    disc.net.zero_grads();
    let a = adversarial_losses(disc, fx, fy, z)?;
    let analytic: Vec<Matrix> = disc.net.params().iter().map(|p| p.grad.clone()).collect();
    let losses = |disc: &mut ModalityDiscriminator, fx: &Matrix, fy: &Matrix| {
        adversarial_losses(disc, fx, fy, z).expect("shape checked above")
    };
    let nx = numeric_gradient(|m| losses(disc, m, fy).gen_adv_loss, fx, FD_STEP);
    let ny = numeric_gradient(|m| losses(disc, fx, m).gen_adv_loss, fy, FD_STEP);
    let mut worst = max_relative_error(&a.grad_fx, &nx).max(max_relative_error(&a.grad_fy, &ny));
    for (p, grad) in analytic.iter().enumerate() {
        for j in 0..grad.as_slice().len() {
            let orig = disc.net.params()[p].value.as_slice()[j];
            let mut eval = |v: f64| {
                disc.net.params_mut()[p].value.as_mut_slice()[j] = v;
                losses(disc, fx, fy).disc_loss
            };
            let numeric = (eval(orig + FD_STEP) - eval(orig - FD_STEP)) / (2.0 * FD_STEP);
            eval(orig);
            worst = worst.max(relative_error(grad.as_slice()[j], numeric));
        }
    }
    disc.net.zero_grads();
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_quadratic() {
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5]]);
        let g = numeric_gradient(|m| m.as_slice().iter().map(|v| v * v).sum(), &x, FD_STEP);
        assert!(max_relative_error(&g, &x.scale(2.0)) < 1e-9);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(0.0, 1e-7) - 1e-2).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
