//! Paired datasets: MNIST halves, validation splits and synthetic views.

mod idx;
mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx_images, load_idx_labels, load_mnist_idx,
    IMAGE_MAGIC, LABEL_MAGIC,
};
pub use synth::{planted_cca_views, rotation_matrix, synth_rotation_dataset, AngleSpec, SynthSpec};

pub const MNIST_SIDE: usize = 28;
pub const MNIST_PIXELS: usize = MNIST_SIDE * MNIST_SIDE;
pub const MNIST_HALF: usize = MNIST_PIXELS / 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
        })
    }
}

/// Row-aligned samples of the two views.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub x: Matrix,
    pub y: Matrix,
    pub labels: Option<Vec<usize>>,
    pub split: SplitTag,
}

impl PairedDataset {
    pub fn new(x: Matrix, y: Matrix, labels: Option<Vec<usize>>, split: SplitTag) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::dim("paired dataset", x.shape(), y.shape()));
        }
        if let Some(l) = &labels {
            if l.len() != x.rows() {
                return Err(Error::Input(format!(
                    "{} labels for {} pairs",
                    l.len(),
                    x.rows()
                )));
            }
        }
        Ok(PairedDataset {
            x,
            y,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize], split: SplitTag) -> PairedDataset {
        PairedDataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            split,
        }
    }

    /// The first `n` pairs (all of them when `n` exceeds the length).
    pub fn head(&self, n: usize) -> PairedDataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx, self.split)
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Input(format!("{} split has no labels", self.split)))
    }
}

/// Left half (image columns 0–13) as `x`, right half (14–27) as `y`.
pub fn split_left_right(
    images: &Matrix,
    labels: Option<Vec<usize>>,
    split: SplitTag,
) -> Result<PairedDataset> {
    if images.cols() != MNIST_PIXELS {
        return Err(Error::Input(format!(
            "expected {MNIST_PIXELS}-pixel images, got width {}",
            images.cols()
        )));
    }
    let n = images.rows();
    let half = MNIST_SIDE / 2;
    let mut x = Vec::with_capacity(n * MNIST_HALF);
    let mut y = Vec::with_capacity(n * MNIST_HALF);
    for row in images.row_iter() {
        for line in row.chunks(MNIST_SIDE) {
            x.extend_from_slice(&line[..half]);
            y.extend_from_slice(&line[half..]);
        }
    }
    PairedDataset::new(
        Matrix::from_vec(n, MNIST_HALF, x)?,
        Matrix::from_vec(n, MNIST_HALF, y)?,
        labels,
        split,
    )
}

/// Inverse of [`split_left_right`].
pub fn reassemble_left_right(left: &Matrix, right: &Matrix) -> Result<Matrix> {
    if left.shape() != right.shape() || left.cols() != MNIST_HALF {
        return Err(Error::dim("reassemble_left_right", left.shape(), right.shape()));
    }
    let half = MNIST_SIDE / 2;
    let mut out = Vec::with_capacity(left.rows() * MNIST_PIXELS);
    for (l, r) in left.row_iter().zip(right.row_iter()) {
        for (lc, rc) in l.chunks(half).zip(r.chunks(half)) {
            out.extend_from_slice(lc);
            out.extend_from_slice(rc);
        }
    }
    Matrix::from_vec(left.rows(), MNIST_PIXELS, out)
}

/// Index sets `(train, valid)` for a seeded validation split, each sorted.
///
/// With labels the split is stratified: every class gives up a share of
/// `n_valid` proportional to its size, rounded by largest remainder.
pub fn validation_indices(
    n: usize,
    labels: Option<&[usize]>,
    n_valid: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_valid >= n && n_valid > 0 {
        return Err(Error::Input(format!(
            "cannot hold out {n_valid} of {n} samples for validation"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut valid = match labels {
        None => {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all.truncate(n_valid);
            all
        }
        Some(labels) => {
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &c) in labels.iter().enumerate() {
                by_class.entry(c).or_default().push(i);
            }
            let quota = stratified_quota(&by_class, n, n_valid);
            let mut picked = Vec::with_capacity(n_valid);
            for (members, q) in by_class.values_mut().zip(quota) {
                members.shuffle(&mut rng);
                picked.extend_from_slice(&members[..q]);
            }
            picked
        }
    };
    valid.sort_unstable();
    let mut is_valid = vec![false; n];
    for &i in &valid {
        is_valid[i] = true;
    }
    let train = (0..n).filter(|&i| !is_valid[i]).collect();
    Ok((train, valid))
}

/// Per-class counts summing to `total`, proportional to class sizes.
pub(crate) fn stratified_quota(
    by_class: &BTreeMap<usize, Vec<usize>>,
    n: usize,
    total: usize,
) -> Vec<usize> {
    let exact: Vec<f64> = by_class
        .values()
        .map(|m| m.len() as f64 * total as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = total - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    // largest fractional part first, lower class first on ties
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        let members = by_class.values().nth(c).expect("class exists").len();
        if quota[c] < members {
            quota[c] += 1;
            remaining -= 1;
        }
    }
    quota
}

/// Splits off `n_valid` pairs for validation, stratified by label when present.
pub fn make_validation_split(
    data: &PairedDataset,
    n_valid: usize,
    seed: u64,
) -> Result<(PairedDataset, PairedDataset)> {
    let (train, valid) = validation_indices(data.len(), data.labels.as_deref(), n_valid, seed)?;
    Ok((
        data.select(&train, data.split),
        data.select(&valid, SplitTag::Valid),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn left_ones_right_zeros() {
        let img = Matrix::from_fn(2, MNIST_PIXELS, |_, p| if p % 28 < 14 { 1.0 } else { 0.0 });
        let d = split_left_right(&img, None, SplitTag::Train).unwrap();
        assert_eq!(d.x.shape(), (2, 392));
        assert!(d.x.as_slice().iter().all(|&v| v == 1.0));
        assert!(d.y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn halves_keep_row_major_order() {
        let img = Matrix::from_fn(1, MNIST_PIXELS, |_, p| p as f64);
        let d = split_left_right(&img, None, SplitTag::Train).unwrap();
        assert_eq!(&d.x.row(0)[..3], &[0.0, 1.0, 2.0]);
        assert_eq!(d.x.get(0, 14), 28.0);
        assert_eq!(d.y.get(0, 0), 14.0);
        assert_eq!(d.y.get(0, 391), 783.0);
        assert_eq!(reassemble_left_right(&d.x, &d.y).unwrap(), img);
    }

    #[test]
    fn wrong_width_rejected() {
        assert!(matches!(
            split_left_right(&Matrix::zeros(1, 783), None, SplitTag::Test),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn validation_split_is_disjoint_and_stratified() {
        let labels: Vec<usize> = (0..600).map(|i| if i < 400 { 0 } else { 1 + i % 2 }).collect();
        let (train, valid) = validation_indices(600, Some(&labels), 60, 7).unwrap();
        assert_eq!((train.len(), valid.len()), (540, 60));
        let mut all: Vec<usize> = train.iter().chain(&valid).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..600).collect::<Vec<_>>());
        let count = |c| valid.iter().filter(|&&i| labels[i] == c).count();
        assert_eq!((count(0), count(1), count(2)), (40, 10, 10));
        assert_eq!(validation_indices(600, Some(&labels), 60, 7).unwrap().1, valid);
        assert_ne!(validation_indices(600, Some(&labels), 60, 8).unwrap().1, valid);
    }

    #[test]
    fn empty_validation_and_oversized_request() {
        let d = PairedDataset::new(Matrix::zeros(5, 2), Matrix::zeros(5, 3), None, SplitTag::Train)
            .unwrap();
        let (train, valid) = make_validation_split(&d, 0, 1).unwrap();
        assert_eq!(train, d);
        assert!(valid.is_empty());
        assert!(matches!(make_validation_split(&d, 5, 1), Err(Error::Input(_))));
    }
}
