//! The pairing loss and the three-class modality-discrimination losses.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::Mode;
use crate::nn::{argmax_rows, softmax_cross_entropy_over};

use super::{Distance, ModalityDiscriminator};

/// Added to the norm product of the cosine distance.
pub const COSINE_EPS: f64 = 1e-8;

pub const LABEL_X: usize = 0;
pub const LABEL_Y: usize = 1;
pub const LABEL_PRIOR: usize = 2;

#[derive(Clone, Debug)]
pub struct PairingLoss {
    pub loss: f64,
    pub grad_x: Matrix,
    pub grad_y: Matrix,
}

/// Mean over rows of `d(fx_i, fy_i)` with analytic gradients for both sides.
pub fn pairing_loss(fx: &Matrix, fy: &Matrix, kind: Distance) -> Result<PairingLoss> {
    if fx.shape() != fy.shape() {
        return Err(Error::dim("pairing_loss", fx.shape(), fy.shape()));
    }
    let (n, d) = fx.shape();
    let inv_n = 1.0 / n.max(1) as f64;
    let mut grad_x = Matrix::zeros(n, d);
    let mut grad_y = Matrix::zeros(n, d);
    let mut total = 0.0;
    for i in 0..n {
        let a = fx.row(i);
        let b = fy.row(i);
        match kind {
            Distance::SquaredL2 => {
                let gx = grad_x.row_mut(i);
                for j in 0..d {
                    let diff = a[j] - b[j];
                    total += diff * diff;
                    gx[j] = 2.0 * diff * inv_n;
                }
                for (gy, gx) in grad_y.row_mut(i).iter_mut().zip(grad_x.row(i)) {
                    *gy = -gx;
                }
            }
            Distance::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                let denom = na * nb + COSINE_EPS;
                total += 1.0 - dot / denom;
                // a zero-norm side has no direction to move along
                if na == 0.0 || nb == 0.0 {
                    continue;
                }
                let d2 = denom * denom;
                let gx = grad_x.row_mut(i);
                for j in 0..d {
                    gx[j] = -(b[j] / denom - dot * nb * a[j] / (na * d2)) * inv_n;
                }
                let gy = grad_y.row_mut(i);
                for j in 0..d {
                    gy[j] = -(a[j] / denom - dot * na * b[j] / (nb * d2)) * inv_n;
                }
            }
        }
    }
    Ok(PairingLoss {
        loss: total * inv_n,
        grad_x,
        grad_y,
    })
}

#[derive(Clone, Debug)]
pub struct AdversarialLosses {
    /// Sum over the present groups (x, y, prior) of the group's mean cross-entropy.
    pub disc_loss: f64,
    /// Minus the x and y terms of `disc_loss`; the generators minimise this.
    pub gen_adv_loss: f64,
    /// Gradient of `gen_adv_loss` with respect to `fx`.
    pub grad_fx: Matrix,
    /// Gradient of `gen_adv_loss` with respect to `fy`.
    pub grad_fy: Matrix,
    /// Fraction of rows the discriminator assigns to their true source.
    pub accuracy: f64,
}

/// Runs the discriminator on `[fx; fy; z]`, accumulates the gradient of
/// `disc_loss` into its parameters and returns the reversed input gradients
/// for the generators.
///
/// Without the prior the softmax runs over the first two logits only, so the
/// prior logit gets exactly zero gradient.
pub fn adversarial_losses(
    disc: &mut ModalityDiscriminator,
    fx: &Matrix,
    fy: &Matrix,
    z: Option<&Matrix>,
) -> Result<AdversarialLosses> {
    if z.is_some() && !disc.use_prior {
        return Err(Error::Config(
            "prior samples supplied to a discriminator trained without the prior".into(),
        ));
    }
    let d_z = disc.net.in_width();
    for m in [Some(fx), Some(fy), z].into_iter().flatten() {
        if m.cols() != d_z {
            return Err(Error::dim("adversarial_losses", (m.rows(), d_z), m.shape()));
        }
    }
    let mut groups: Vec<(&Matrix, usize)> = vec![(fx, LABEL_X), (fy, LABEL_Y)];
    if let Some(z) = z {
        groups.push((z, LABEL_PRIOR));
    }
    let parts: Vec<&Matrix> = groups.iter().map(|(m, _)| *m).collect();
    let input = Matrix::vstack(&parts)?;
    let labels: Vec<usize> = groups
        .iter()
        .flat_map(|(m, l)| std::iter::repeat_n(*l, m.rows()))
        .collect();
    let classes = disc.effective_classes();

    let logits = disc.net.forward(&input, Mode::Train)?;
    let (per_sample, mut grad) = softmax_cross_entropy_over(&logits, &labels, classes)?;

    // Rescale rows from the overall mean to per-group means.
    let total_rows = input.rows() as f64;
    let mut group_means = Vec::with_capacity(groups.len());
    let mut start = 0;
    for (m, _) in &groups {
        let rows = m.rows();
        let end = start + rows;
        let mean = if rows > 0 {
            per_sample[start..end].iter().sum::<f64>() / rows as f64
        } else {
            0.0
        };
        group_means.push(mean);
        let scale = if rows > 0 { total_rows / rows as f64 } else { 0.0 };
        for i in start..end {
            grad.row_mut(i).iter_mut().for_each(|g| *g *= scale);
        }
        start = end;
    }

    let predictions = argmax_rows(&logits, classes);
    let correct = predictions.iter().zip(&labels).filter(|(p, t)| p == t).count();

    let grad_input = disc.net.backward(&grad)?;
    let n_x = fx.rows();
    let n_y = fy.rows();
    let grad_fx = grad_input.slice_rows(0, n_x).scale(-1.0);
    let grad_fy = grad_input.slice_rows(n_x, n_x + n_y).scale(-1.0);

    Ok(AdversarialLosses {
        disc_loss: group_means.iter().sum(),
        gen_adv_loss: -(group_means[0] + group_means[1]),
        grad_fx,
        grad_fy,
        accuracy: correct as f64 / labels.len().max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Network;
    use crate::nn::{Dense, Layer};

    #[test]
    fn coincident_pairs_cost_nothing() {
        let f = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        let p = pairing_loss(&f, &f, Distance::SquaredL2).unwrap();
        assert_eq!(p.loss, 0.0);
        assert_eq!(p.grad_x.max_abs(), 0.0);
        assert_eq!(p.grad_y.max_abs(), 0.0);
    }

    #[test]
    fn hand_values() {
        let a = Matrix::from_rows(&[[1.0, 0.0]]);
        let b = Matrix::from_rows(&[[0.0, 2.0]]);
        assert_eq!(pairing_loss(&a, &b, Distance::SquaredL2).unwrap().loss, 5.0);
        let c = Matrix::from_rows(&[[0.0, 1.0]]);
        assert!((pairing_loss(&a, &c, Distance::Cosine).unwrap().loss - 1.0).abs() < 1e-15);
        let same = pairing_loss(&a, &a.scale(3.0), Distance::Cosine).unwrap();
        assert!(same.loss.abs() < 1e-8);
    }

    #[test]
    fn zero_norm_cosine_has_zero_gradient() {
        let a = Matrix::from_rows(&[[0.0, 0.0]]);
        let b = Matrix::from_rows(&[[1.0, 2.0]]);
        let p = pairing_loss(&a, &b, Distance::Cosine).unwrap();
        assert_eq!(p.loss, 1.0);
        assert_eq!(p.grad_x.max_abs(), 0.0);
        assert_eq!(p.grad_y.max_abs(), 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let e = pairing_loss(&Matrix::zeros(2, 3), &Matrix::zeros(2, 2), Distance::Cosine);
        assert!(matches!(e, Err(Error::Dimension { .. })));
    }

    fn disc_with_final(w: Matrix, b: Vec<f64>, use_prior: bool) -> ModalityDiscriminator {
        let d = w.rows();
        let net = Network::new(d)
            .with(Layer::Dense(Dense::from_parts(w, b).unwrap()))
            .unwrap();
        ModalityDiscriminator { net, use_prior }
    }

    #[test]
    fn zeroed_discriminator_is_uniform() {
        let mut disc = disc_with_final(Matrix::zeros(2, 3), vec![0.0; 3], true);
        let f = Matrix::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]);
        let l = adversarial_losses(&mut disc, &f, &f, Some(&f)).unwrap();
        let ln3 = 3f64.ln();
        assert!((l.disc_loss - 3.0 * ln3).abs() < 1e-12);
        assert!((l.gen_adv_loss + 2.0 * ln3).abs() < 1e-12);
    }

    #[test]
    fn hand_set_logits() {
        // identity-like head: logits equal the 3-wide input
        let mut disc = disc_with_final(Matrix::identity(3), vec![0.0; 3], true);
        let fx = Matrix::from_rows(&[[2.0, 0.0, 0.0]]);
        let fy = Matrix::from_rows(&[[0.0, 1.0, 0.0]]);
        let z = Matrix::from_rows(&[[0.0, 0.0, -1.0]]);
        let l = adversarial_losses(&mut disc, &fx, &fy, Some(&z)).unwrap();
        let ce = |row: [f64; 3], t: usize| {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            -(row[t].exp() / s).ln()
        };
        let cx = ce([2.0, 0.0, 0.0], 0);
        let cy = ce([0.0, 1.0, 0.0], 1);
        let cz = ce([0.0, 0.0, -1.0], 2);
        assert!((l.disc_loss - (cx + cy + cz)).abs() < 1e-12);
        assert!((l.gen_adv_loss + cx + cy).abs() < 1e-12);
        // fx, fy predicted correctly; z is not
        assert!((l.accuracy - 2.0 / 3.0).abs() < 1e-12);
        // reversed gradient of the x term: -(softmax - onehot)
        let s: f64 = [2.0f64, 0.0, 0.0].iter().map(|v| v.exp()).sum();
        let want = [-(2f64.exp() / s - 1.0), -(1.0 / s), -(1.0 / s)];
        for (g, w) in l.grad_fx.as_slice().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_samples_without_prior_is_config_error() {
        let mut disc = disc_with_final(Matrix::zeros(2, 3), vec![0.0; 3], false);
        let f = Matrix::zeros(1, 2);
        assert!(matches!(
            adversarial_losses(&mut disc, &f, &f, Some(&f)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn prior_logit_untouched_without_prior() {
        let w = Matrix::from_rows(&[[0.3, -0.2, 0.9], [0.1, 0.4, -0.7]]);
        let mut disc = disc_with_final(w, vec![0.1, 0.2, 0.3], false);
        let fx = Matrix::from_rows(&[[1.0, 2.0], [0.5, -1.0]]);
        let fy = Matrix::from_rows(&[[-1.0, 0.0], [2.0, 2.0]]);
        let l = adversarial_losses(&mut disc, &fx, &fy, None).unwrap();
        assert!(l.disc_loss > 0.0);
        let p = disc.net.params();
        let (w, b) = (&p[0].grad, &p[1].grad);
        assert!(w.get(0, 0) != 0.0);
        assert_eq!(w.get(0, 2), 0.0);
        assert_eq!(w.get(1, 2), 0.0);
        assert_eq!(b.get(0, 2), 0.0);
    }
}
