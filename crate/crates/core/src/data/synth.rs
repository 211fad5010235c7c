//! Synthetic paired views: a labelled Gaussian mixture and a rotated, noisy copy.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{PairedDataset, SplitTag};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AngleSpec {
    Identity,
    /// Rotates each coordinate pair `(0,1), (2,3), …` by `radians`.
    Planar { radians: f64 },
    /// A Haar-random orthogonal matrix.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    /// Distance of each class mean from the origin; within-class spread is 1.
    pub separation: f64,
    pub angle: AngleSpec,
    /// Standard deviation of the isotropic noise added to `y`.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 2000,
            d: 2,
            classes: 4,
            separation: 3.0,
            angle: AngleSpec::Planar { radians: 1.0 },
            noise: 0.1,
            seed: 0,
        }
    }
}

pub fn rotation_matrix(d: usize, angle: AngleSpec, rng: &mut impl Rng) -> Matrix {
    match angle {
        AngleSpec::Identity => Matrix::identity(d),
        AngleSpec::Planar { radians } => {
            let (s, c) = radians.sin_cos();
            let mut r = Matrix::identity(d);
            for p in (0..d.saturating_sub(1)).step_by(2) {
                r.set(p, p, c);
                r.set(p, p + 1, -s);
                r.set(p + 1, p, s);
                r.set(p + 1, p + 1, c);
            }
            r
        }
        AngleSpec::Random => {
            let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
            let qr = g.qr();
            let (q, rr) = (qr.q(), qr.r());
            // sign-fix the columns so the distribution is Haar
            Matrix::from_fn(d, d, |i, j| {
                let s = if rr[(j, j)] < 0.0 { -1.0 } else { 1.0 };
                q[(i, j)] * s
            })
        }
    }
}

/// `x` from a balanced labelled Gaussian mixture, `y = x·Rᵀ + noise`.
pub fn synth_rotation_dataset(spec: &SynthSpec) -> Result<PairedDataset> {
    if spec.d < 2 {
        return Err(Error::Input(format!("need d >= 2, got {}", spec.d)));
    }
    if spec.classes == 0 {
        return Err(Error::Input("need at least one class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|a| a / norm * spec.separation).collect()
        })
        .collect();
    let rot = rotation_matrix(spec.d, spec.angle, &mut rng);
    let mut labels: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);
    let x = Matrix::from_fn(spec.n, spec.d, |i, j| {
        means[labels[i]][j] + rng.sample::<f64, _>(StandardNormal)
    });
    let mut y = x.matmul_t(&rot)?;
    if spec.noise > 0.0 {
        for v in y.as_mut_slice() {
            *v += spec.noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    PairedDataset::new(x, y, Some(labels), SplitTag::Train)
}

/// Two views whose population canonical correlations are exactly
/// `correlations`, hidden behind random invertible linear mixes.
///
/// Latent pairs `(u_i, v_i)` have correlation `correlations[i]`; all other
/// latent coordinates are independent standard normals.
pub fn planted_cca_views(
    n: usize,
    dx: usize,
    dy: usize,
    correlations: &[f64],
    seed: u64,
) -> Result<(Matrix, Matrix)> {
    let k = correlations.len();
    if k > dx.min(dy) {
        return Err(Error::Input(format!("{k} planted correlations need widths >= {k}")));
    }
    if correlations.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Input("planted correlations must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lx = Matrix::from_fn(n, dx, |_, _| rng.sample(StandardNormal));
    let mut ly = Matrix::from_fn(n, dy, |_, _| rng.sample(StandardNormal));
    for i in 0..n {
        for (j, &r) in correlations.iter().enumerate() {
            let v = r * lx.get(i, j) + (1.0 - r * r).sqrt() * ly.get(i, j);
            ly.set(i, j, v);
        }
    }
    let mut mix = |d: usize| -> Matrix {
        let q = rotation_matrix(d, AngleSpec::Random, &mut rng);
        let scales: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
        Matrix::from_fn(d, d, |i, j| q.get(i, j) * scales[j])
    };
    let (a, b) = (mix(dx), mix(dy));
    lx = lx.matmul(&a)?;
    ly = ly.matmul(&b)?;
    Ok((lx, ly))
}
