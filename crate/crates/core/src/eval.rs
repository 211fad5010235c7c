//! Evaluation protocols for learned representations.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{accuracy, fit_cca, fit_logreg, predict_logreg, LogRegConfig, Ridge};
use crate::data::stratified_quota;
use crate::embedding::{EmbeddingSet, Modality};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Accuracy of a classifier trained on one view's embeddings and tested on
/// another's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrlResult {
    pub train_modality: Modality,
    pub test_modality: Modality,
    pub accuracy: f64,
    pub n_labeled: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Sorted non-increasing.
    pub per_component: Vec<f64>,
    pub top_k_sum: f64,
    pub k: usize,
}

impl CorrelationReport {
    fn from_values(mut values: Vec<f64>, k: usize) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        let top_k_sum = values[..k].iter().sum();
        CorrelationReport {
            per_component: values,
            top_k_sum,
            k,
        }
    }
}

/// Which embeddings train the classifier and which ones test it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SrlDirection {
    pub train: Modality,
    pub test: Modality,
}

impl SrlDirection {
    pub const X_TO_Y: SrlDirection = SrlDirection {
        train: Modality::X,
        test: Modality::Y,
    };
    pub const Y_TO_X: SrlDirection = SrlDirection {
        train: Modality::Y,
        test: Modality::X,
    };
}

fn check_labels(emb: &Matrix, labels: &[usize], what: &str) -> Result<()> {
    if emb.rows() != labels.len() {
        return Err(Error::Input(format!(
            "{what}: {} embeddings but {} labels",
            emb.rows(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn srl_evaluate(
    train_emb: &EmbeddingSet,
    train_labels: &[usize],
    test_emb: &EmbeddingSet,
    test_labels: &[usize],
    direction: SrlDirection,
    cfg: &LogRegConfig,
) -> Result<SrlResult> {
    let train = train_emb.get(direction.train)?;
    let test = test_emb.get(direction.test)?;
    srl_on_matrices(train, train_labels, test, test_labels, direction, cfg)
}

fn srl_on_matrices(
    train: &Matrix,
    train_labels: &[usize],
    test: &Matrix,
    test_labels: &[usize],
    direction: SrlDirection,
    cfg: &LogRegConfig,
) -> Result<SrlResult> {
    check_labels(train, train_labels, "training set")?;
    check_labels(test, test_labels, "test set")?;
    if train.cols() != test.cols() {
        return Err(Error::dim("srl_evaluate", train.shape(), test.shape()));
    }
    let seen: BTreeSet<usize> = train_labels.iter().copied().collect();
    let unseen: BTreeSet<usize> = test_labels.iter().filter(|l| !seen.contains(l)).copied().collect();
    if !unseen.is_empty() {
        return Err(Error::Config(format!(
            "test classes {unseen:?} never appear in the training labels"
        )));
    }
    let model = fit_logreg(train, train_labels, cfg)?;
    let predicted = predict_logreg(&model, test)?;
    Ok(SrlResult {
        train_modality: direction.train,
        test_modality: direction.test,
        accuracy: accuracy(&predicted, test_labels),
        n_labeled: train_labels.len(),
    })
}

/// Sum of the `k` largest canonical correlations between two embedding sets.
pub fn topk_correlation(fx: &Matrix, fy: &Matrix, k: usize) -> Result<CorrelationReport> {
    let r = fx.cols().min(fy.cols());
    if k > r {
        return Err(Error::Input(format!("k = {k} exceeds the embedding width {r}")));
    }
    let model = fit_cca(fx, fy, r, Ridge::default())?;
    Ok(CorrelationReport::from_values(model.correlations, k))
}

/// Per-dimension Pearson correlations between `fx[:, j]` and `fy[:, j]`, with
/// no alignment step.
pub fn pearson_per_dimension(fx: &Matrix, fy: &Matrix, k: usize) -> Result<CorrelationReport> {
    if fx.shape() != fy.shape() {
        return Err(Error::dim("pearson_per_dimension", fx.shape(), fy.shape()));
    }
    if k > fx.cols() {
        return Err(Error::Input(format!("k = {k} exceeds the embedding width {}", fx.cols())));
    }
    let mx = fx.column_means();
    let my = fy.column_means();
    let values = (0..fx.cols())
        .map(|j| {
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for i in 0..fx.rows() {
                let a = fx.get(i, j) - mx[j];
                let b = fy.get(i, j) - my[j];
                sxy += a * b;
                sxx += a * a;
                syy += b * b;
            }
            if sxx > 0.0 && syy > 0.0 {
                sxy / (sxx * syy).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(CorrelationReport::from_values(values, k))
}

/// Class-stratified subsample of `size` indices out of `labels`, sorted.
pub fn stratified_subsample(labels: &[usize], size: usize, seed: u64) -> Result<Vec<usize>> {
    let n = labels.len();
    if size > n {
        return Err(Error::Input(format!("subsample of {size} requested from {n} labeled samples")));
    }
    if size == n {
        return Ok((0..n).collect());
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let quota = stratified_quota(&by_class, n, size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(size);
    for (members, q) in by_class.values_mut().zip(quota) {
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..q]);
    }
    picked.sort_unstable();
    Ok(picked)
}

/// One [`srl_evaluate`] per labeled-subset size, each on a class-stratified
/// subsample of the training embeddings drawn with `seed`.
#[allow(clippy::too_many_arguments)]
pub fn label_efficiency_curve(
    train_emb: &EmbeddingSet,
    train_labels: &[usize],
    test_emb: &EmbeddingSet,
    test_labels: &[usize],
    direction: SrlDirection,
    sizes: &[usize],
    seed: u64,
    cfg: &LogRegConfig,
) -> Result<Vec<SrlResult>> {
    let train = train_emb.get(direction.train)?;
    let test = test_emb.get(direction.test)?;
    check_labels(train, train_labels, "training set")?;
    if let Some(&too_big) = sizes.iter().find(|&&s| s > train_labels.len()) {
        return Err(Error::Input(format!(
            "label budget {too_big} exceeds the {} labeled samples available",
            train_labels.len()
        )));
    }
    sizes
        .iter()
        .map(|&size| {
            let idx = stratified_subsample(train_labels, size, seed)?;
            let sub = train.select_rows(&idx);
            let sub_labels: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
            srl_on_matrices(&sub, &sub_labels, test, test_labels, direction, cfg)
        })
        .collect()
}

/// Nearest class vector by cosine similarity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalPrediction {
    /// `None` when the query has zero norm.
    pub class_id: Option<usize>,
    pub similarity: f64,
    /// Set when the query or some class vector has zero norm.
    pub diagnostic: Option<String>,
}

/// Assigns each query row the id of the class vector with the highest cosine
/// similarity, breaking exact ties towards the lowest id. Zero-norm class
/// vectors never match.
pub fn cosine_retrieval_classify(
    queries: &Matrix,
    class_vectors: &Matrix,
    class_ids: &[usize],
) -> Result<Vec<RetrievalPrediction>> {
    if class_vectors.rows() == 0 {
        return Err(Error::Input("retrieval needs at least one class vector".into()));
    }
    if class_vectors.rows() != class_ids.len() {
        return Err(Error::Input(format!(
            "{} class vectors but {} class ids",
            class_vectors.rows(),
            class_ids.len()
        )));
    }
    if queries.cols() != class_vectors.cols() {
        return Err(Error::dim("cosine_retrieval_classify", queries.shape(), class_vectors.shape()));
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let class_norms: Vec<f64> = class_vectors.row_iter().map(norm).collect();
    let dead: Vec<usize> = class_ids
        .iter()
        .zip(&class_norms)
        .filter(|(_, &n)| n == 0.0)
        .map(|(&id, _)| id)
        .collect();
    let class_note = (!dead.is_empty()).then(|| format!("zero-norm class vectors ignored: {dead:?}"));

    let preds = queries
        .row_iter()
        .map(|q| {
            let qn = norm(q);
            if qn == 0.0 {
                let mut msg = "zero-norm query".to_string();
                if let Some(note) = &class_note {
                    msg = format!("{msg}; {note}");
                }
                return RetrievalPrediction {
                    class_id: None,
                    similarity: f64::NAN,
                    diagnostic: Some(msg),
                };
            }
            let mut best: Option<(usize, f64)> = None;
            for ((c, &id), &cn) in class_vectors.row_iter().zip(class_ids).zip(&class_norms) {
                if cn == 0.0 {
                    continue;
                }
                let dot: f64 = q.iter().zip(c).map(|(a, b)| a * b).sum();
                let sim = dot / (qn * cn);
                best = match best {
                    Some((bid, bsim)) if bsim > sim || (bsim == sim && bid < id) => Some((bid, bsim)),
                    _ => Some((id, sim)),
                };
            }
            match best {
                Some((id, sim)) => RetrievalPrediction {
                    class_id: Some(id),
                    similarity: sim,
                    diagnostic: class_note.clone(),
                },
                None => RetrievalPrediction {
                    class_id: None,
                    similarity: f64::NAN,
                    diagnostic: class_note.clone(),
                },
            }
        })
        .collect();
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(seed: u64, n: usize, d: usize) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn self_correlation_is_k() {
        let fx = gaussian(1, 300, 8);
        let r = topk_correlation(&fx, &fx, 8).unwrap();
        assert!((r.top_k_sum - 8.0).abs() < 1e-6, "{}", r.top_k_sum);
        assert!(matches!(topk_correlation(&fx, &fx, 9), Err(Error::Input(_))));
    }

    #[test]
    fn independent_embeddings_sum_is_small() {
        let r = topk_correlation(&gaussian(2, 20_000, 5), &gaussian(3, 20_000, 5), 5).unwrap();
        assert!(r.top_k_sum < 0.2, "{}", r.top_k_sum);
    }

    #[test]
    fn pearson_variant() {
        let fx = gaussian(4, 200, 3);
        let mut fy = fx.scale(2.0);
        for i in 0..200 {
            fy.set(i, 2, -fy.get(i, 2));
        }
        let r = pearson_per_dimension(&fx, &fy, 2).unwrap();
        assert!((r.top_k_sum - 2.0).abs() < 1e-12);
        assert!((r.per_component[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn srl_identity_and_mismatch() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let f = Matrix::from_fn(100, 2, |i, j| if labels[i] == j { 3.0 } else { -3.0 });
        let e = EmbeddingSet::new("t", Some(f.clone()), Some(f));
        let r = srl_evaluate(&e, &labels, &e, &labels, SrlDirection::X_TO_Y, &LogRegConfig::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.n_labeled, 100);
        let mut test_labels = labels.clone();
        test_labels[0] = 5;
        assert!(matches!(
            srl_evaluate(&e, &labels, &e, &test_labels, SrlDirection::X_TO_Y, &LogRegConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn full_budget_equals_plain_srl() {
        let f = gaussian(5, 120, 3);
        let labels: Vec<usize> = (0..120).map(|i| usize::from(f.get(i, 0) > 0.0)).collect();
        let e = EmbeddingSet::new("t", Some(f.clone()), Some(f));
        let cfg = LogRegConfig::default();
        let single = srl_evaluate(&e, &labels, &e, &labels, SrlDirection::Y_TO_X, &cfg).unwrap();
        let curve =
            label_efficiency_curve(&e, &labels, &e, &labels, SrlDirection::Y_TO_X, &[120], 9, &cfg).unwrap();
        assert_eq!(curve, vec![single]);
        assert!(matches!(
            label_efficiency_curve(&e, &labels, &e, &labels, SrlDirection::Y_TO_X, &[121], 9, &cfg),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn stratified_subsample_keeps_proportions() {
        let labels: Vec<usize> = (0..1000).map(|i| if i < 700 { 0 } else { 1 }).collect();
        let idx = stratified_subsample(&labels, 100, 3).unwrap();
        assert_eq!(idx.len(), 100);
        assert_eq!(idx.iter().filter(|&&i| labels[i] == 0).count(), 70);
        assert_eq!(idx, stratified_subsample(&labels, 100, 3).unwrap());
    }

    #[test]
    fn retrieval_basics() {
        let classes = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let ids = [7, 3];
        let q = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [0.0, 0.0]]);
        let p = cosine_retrieval_classify(&q, &classes, &ids).unwrap();
        assert_eq!(p[0].class_id, Some(7));
        // equal cosine to both: lower id wins regardless of row order
        assert_eq!(p[1].class_id, Some(3));
        assert_eq!(p[2].class_id, None);
        assert!(p[2].diagnostic.as_deref().unwrap().contains("zero-norm query"));
    }

    #[test]
    fn zero_class_vector_is_skipped_and_flagged() {
        let classes = Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0]]);
        let p = cosine_retrieval_classify(&Matrix::from_rows(&[[1.0, 0.1]]), &classes, &[0, 1]).unwrap();
        assert_eq!(p[0].class_id, Some(1));
        assert!(p[0].diagnostic.as_deref().unwrap().contains("[0]"));
    }
}
