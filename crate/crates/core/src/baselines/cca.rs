//! Linear canonical correlation analysis.
//!
//! Directions come from the SVD of the whitened cross-covariance
//! `Cxx^{-1/2} Cxy Cyy^{-1/2}`, with a ridge added to both covariances. Each
//! direction is then rescaled so the projected training view has unit sample
//! variance, and the reported correlations are the plain sample correlations
//! of the projected training views.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Ridge added to each view's covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Ridge {
    /// `value · I`
    Absolute(f64),
    /// `value · trace(C)/dim · I`, scaling with the view's mean variance.
    Relative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-4)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CcaModel {
    /// `d_x × r` projection for the x view.
    pub wx: Matrix,
    pub wy: Matrix,
    /// Non-increasing, each in `[0, 1]`.
    pub correlations: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    /// Absolute ridges actually applied to each view.
    pub reg_x: f64,
    pub reg_y: f64,
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_dmatrix(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn centered(m: &Matrix) -> (Matrix, Vec<f64>) {
    let mean = m.column_means();
    let mut c = m.clone();
    let neg: Vec<f64> = mean.iter().map(|v| -v).collect();
    c.add_row_broadcast(&neg).expect("same width");
    (c, mean)
}

/// Inverse square root of a regularised covariance.
fn inv_sqrt(cov: &DMatrix<f64>, view: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let floor = max * 1e-12;
    if let Some(bad) = eig.eigenvalues.iter().find(|&&v| v <= floor) {
        return Err(Error::Numeric(format!(
            "{view} covariance is rank deficient (eigenvalue {bad:e}, largest {max:e}); \
             use a nonzero ridge"
        )));
    }
    let d = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&d) * v.transpose())
}

fn ridge_value(ridge: Ridge, cov: &DMatrix<f64>) -> f64 {
    match ridge {
        Ridge::Absolute(v) => v,
        Ridge::Relative(f) => f * cov.trace() / cov.nrows().max(1) as f64,
    }
}

pub fn fit_cca(x: &Matrix, y: &Matrix, r: usize, ridge: Ridge) -> Result<CcaModel> {
    if x.rows() != y.rows() {
        return Err(Error::dim("fit_cca", x.shape(), y.shape()));
    }
    let n = x.rows();
    if n < 2 {
        return Err(Error::Input(format!("CCA needs at least 2 pairs, got {n}")));
    }
    if r > x.cols().min(y.cols()) {
        return Err(Error::Input(format!(
            "{r} components requested but the views have widths {} and {}",
            x.cols(),
            y.cols()
        )));
    }
    let (xc, mean_x) = centered(x);
    let (yc, mean_y) = centered(y);
    let scale = 1.0 / (n - 1) as f64;
    let mut cxx = to_dmatrix(&xc.t_matmul(&xc)?.scale(scale));
    let mut cyy = to_dmatrix(&yc.t_matmul(&yc)?.scale(scale));
    let cxy = to_dmatrix(&xc.t_matmul(&yc)?.scale(scale));
    let reg_x = ridge_value(ridge, &cxx);
    let reg_y = ridge_value(ridge, &cyy);
    for i in 0..cxx.nrows() {
        cxx[(i, i)] += reg_x;
    }
    for i in 0..cyy.nrows() {
        cyy[(i, i)] += reg_y;
    }
    let kx = inv_sqrt(&cxx, "x")?;
    let ky = inv_sqrt(&cyy, "y")?;
    let t = &kx * &cxy * &ky;
    let svd = t.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numeric("SVD produced no left vectors".into()))?;
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD produced no right vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(r);

    let wx_full = &kx * u.select_columns(&order);
    let wy_full = &ky * vt.transpose().select_columns(&order);
    let mut wx = from_dmatrix(&wx_full);
    let mut wy = from_dmatrix(&wy_full);

    // Unit sample variance on the training views, then sample correlations.
    let px = xc.matmul(&wx)?;
    let py = yc.matmul(&wy)?;
    let sx: Vec<f64> = px.column_variances().iter().map(|v| (v * n as f64 * scale).sqrt()).collect();
    let sy: Vec<f64> = py.column_variances().iter().map(|v| (v * n as f64 * scale).sqrt()).collect();
    let cross = px.t_matmul(&py)?;
    let mut corr = Vec::with_capacity(r);
    for j in 0..r {
        let denom = sx[j] * sy[j] * (n - 1) as f64;
        let c = if denom > 0.0 { cross.get(j, j) / denom } else { 0.0 };
        corr.push(c);
        for i in 0..wx.rows() {
            wx.set(i, j, if sx[j] > 0.0 { wx.get(i, j) / sx[j] } else { 0.0 });
        }
        for i in 0..wy.rows() {
            wy.set(i, j, if sy[j] > 0.0 { wy.get(i, j) / sy[j] } else { 0.0 });
        }
    }
    // sign convention: positive correlation, largest |wx| entry positive
    for (j, c) in corr.iter_mut().enumerate() {
        if *c < 0.0 {
            *c = -*c;
            negate_col(&mut wy, j);
        }
        let col = wx.column(j);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            negate_col(&mut wx, j);
            negate_col(&mut wy, j);
        }
        *c = c.min(1.0);
    }
    let mut perm: Vec<usize> = (0..r).collect();
    perm.sort_by(|&a, &b| corr[b].total_cmp(&corr[a]));
    Ok(CcaModel {
        wx: wx.select_cols(&perm),
        wy: wy.select_cols(&perm),
        correlations: perm.iter().map(|&j| corr[j]).collect(),
        mean_x,
        mean_y,
        reg_x,
        reg_y,
    })
}

fn negate_col(m: &mut Matrix, j: usize) {
    for i in 0..m.rows() {
        m.set(i, j, -m.get(i, j));
    }
}

fn project(m: &Matrix, mean: &[f64], w: &Matrix) -> Result<Matrix> {
    if m.cols() != w.rows() {
        return Err(Error::dim("cca_project", m.shape(), w.shape()));
    }
    let mut out = m.matmul(w)?;
    // (m - mean)·w = m·w - mean·w
    let shift: Vec<f64> = (0..w.cols())
        .map(|j| -(0..w.rows()).map(|i| mean[i] * w.get(i, j)).sum::<f64>())
        .collect();
    out.add_row_broadcast(&shift)?;
    Ok(out)
}

pub fn cca_project(model: &CcaModel, x: Option<&Matrix>, y: Option<&Matrix>) -> Result<EmbeddingSet> {
    if x.is_none() && y.is_none() {
        return Err(Error::Input("cca_project needs at least one view".into()));
    }
    let fx = x.map(|x| project(x, &model.mean_x, &model.wx)).transpose()?;
    let fy = y.map(|y| project(y, &model.mean_y, &model.wy)).transpose()?;
    Ok(EmbeddingSet::new("cca", fx, fy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn identical_views_correlate_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(&mut rng, 500, 6);
        let m = fit_cca(&x, &x, 6, Ridge::Absolute(1e-10)).unwrap();
        for c in &m.correlations {
            assert!((c - 1.0).abs() < 1e-6, "{c}");
        }
        // default ridge still gives exact self-correlation
        let m = fit_cca(&x, &x, 6, Ridge::default()).unwrap();
        assert!(m.correlations.iter().all(|c| (c - 1.0).abs() < 1e-9));
    }

    #[test]
    fn independent_views_barely_correlate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(&mut rng, 10_000, 4);
        let y = gaussian(&mut rng, 10_000, 3);
        let m = fit_cca(&x, &y, 3, Ridge::default()).unwrap();
        assert!(m.correlations[0] < 0.1, "{:?}", m.correlations);
    }

    #[test]
    fn training_projection_has_unit_variance_and_centering() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(&mut rng, 400, 5);
        let y = x.matmul(&gaussian(&mut rng, 5, 4)).unwrap().add(&gaussian(&mut rng, 400, 4)).unwrap();
        let m = fit_cca(&x, &y, 4, Ridge::default()).unwrap();
        let e = cca_project(&m, Some(&x), Some(&y)).unwrap();
        for v in [e.fx.as_ref().unwrap(), e.fy.as_ref().unwrap()] {
            for var in v.column_variances() {
                assert!((var * 400.0 / 399.0 - 1.0).abs() < 1e-3, "{var}");
            }
        }
        let zero = cca_project(&m, Some(&Matrix::zeros(1, 5)), None).unwrap();
        let want = Matrix::row_vector(&m.mean_x).matmul(&m.wx).unwrap().scale(-1.0);
        assert!(zero.fx.unwrap().sub(&want).unwrap().max_abs() < 1e-12);
        assert!(m.correlations.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_deficient_without_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = gaussian(&mut rng, 50, 2);
        // third column duplicates the first
        let x = Matrix::from_fn(50, 3, |i, j| base.get(i, j % 2));
        let err = fit_cca(&x, &base, 2, Ridge::Absolute(0.0)).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("ridge"));
        assert!(fit_cca(&x, &base, 2, Ridge::default()).is_ok());
    }

    #[test]
    fn input_errors() {
        let x = Matrix::zeros(10, 3);
        assert!(matches!(fit_cca(&x, &Matrix::zeros(9, 3), 1, Ridge::default()), Err(Error::Dimension { .. })));
        assert!(matches!(fit_cca(&x, &Matrix::zeros(10, 2), 3, Ridge::default()), Err(Error::Input(_))));
        assert!(matches!(
            fit_cca(&Matrix::zeros(1, 2), &Matrix::zeros(1, 2), 1, Ridge::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn swapping_views_swaps_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(&mut rng, 300, 4);
        let y = x.select_cols(&[0, 1, 2]).add(&gaussian(&mut rng, 300, 3).scale(0.8)).unwrap();
        let a = fit_cca(&x, &y, 3, Ridge::default()).unwrap();
        let b = fit_cca(&y, &x, 3, Ridge::default()).unwrap();
        for (p, q) in a.correlations.iter().zip(&b.correlations) {
            assert!((p - q).abs() < 1e-10);
        }
        for j in 0..3 {
            let s = if a.wx.get(0, j).signum() == b.wy.get(0, j).signum() { 1.0 } else { -1.0 };
            for i in 0..4 {
                assert!((a.wx.get(i, j) - s * b.wy.get(i, j)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn correlations_survive_affine_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian(&mut rng, 2000, 3);
        let y = x.add(&gaussian(&mut rng, 2000, 3)).unwrap();
        let a = fit_cca(&x, &y, 3, Ridge::default()).unwrap();
        let t = Matrix::from_rows(&[[2.0, 0.3, 0.0], [0.1, 1.5, -0.4], [0.0, 0.2, 0.7]]);
        let mut x2 = x.matmul(&t).unwrap();
        x2.add_row_broadcast(&[5.0, -3.0, 1.0]).unwrap();
        let b = fit_cca(&x2, &y, 3, Ridge::default()).unwrap();
        for (p, q) in a.correlations.iter().zip(&b.correlations) {
            assert!((p - q).abs() < 1e-3, "{p} {q}");
        }
        assert!(rng.random::<f64>() >= 0.0);
    }
}
