use demian_core::baselines::{fit_cca, fit_logreg, predict_logreg, LogRegConfig, Ridge};
use demian_core::data::{reassemble_left_right, split_left_right, SplitTag, MNIST_PIXELS};
use demian_core::eval::{cosine_retrieval_classify, srl_evaluate, topk_correlation, SrlDirection};
use demian_core::nn::BatchNorm;
use demian_core::{EmbeddingSet, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn correlated_views(seed: u64, n: usize, dx: usize, dy: usize) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian(&mut rng, n, dx);
    let mix = gaussian(&mut rng, dx, dy);
    let y = x.matmul(&mix).unwrap().add(&gaussian(&mut rng, n, dy).scale(1.5)).unwrap();
    (x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cca_is_symmetric(seed in any::<u64>(), dx in 2usize..6, dy in 2usize..6) {
        let (x, y) = correlated_views(seed, 300, dx, dy);
        let r = dx.min(dy);
        let a = fit_cca(&x, &y, r, Ridge::default()).unwrap();
        let b = fit_cca(&y, &x, r, Ridge::default()).unwrap();
        for (p, q) in a.correlations.iter().zip(&b.correlations) {
            prop_assert!((p - q).abs() < 1e-9, "{p} vs {q}");
        }
        // swapped weights agree up to the per-component sign
        for j in 0..r {
            let s = (a.wx.column(j).iter().zip(b.wy.column(j)).map(|(u, v)| u * v).sum::<f64>()).signum();
            for i in 0..dx {
                prop_assert!((a.wx.get(i, j) - s * b.wy.get(i, j)).abs() < 1e-6 * (1.0 + a.wx.get(i, j).abs()));
            }
        }
    }

    #[test]
    fn cca_correlations_survive_affine_maps(seed in any::<u64>()) {
        let (x, y) = correlated_views(seed, 2000, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        // well-conditioned: identity plus a small perturbation
        let t = Matrix::identity(3).add(&gaussian(&mut rng, 3, 3).scale(0.2)).unwrap();
        let mut x2 = x.matmul(&t).unwrap();
        x2.add_row_broadcast(&[3.0, -1.0, 0.5]).unwrap();
        let a = fit_cca(&x, &y, 3, Ridge::default()).unwrap();
        let b = fit_cca(&x2, &y, 3, Ridge::default()).unwrap();
        for (p, q) in a.correlations.iter().zip(&b.correlations) {
            prop_assert!((p - q).abs() <= 1e-3, "{p} vs {q}");
        }
    }

    #[test]
    fn cca_invariants(seed in any::<u64>(), d in 2usize..6) {
        let (x, y) = correlated_views(seed, 200, d, d);
        let m = fit_cca(&x, &y, d, Ridge::default()).unwrap();
        prop_assert!(m.correlations.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(m.correlations.iter().all(|&c| (0.0..=1.0 + 1e-8).contains(&c)));
    }

    #[test]
    fn self_correlation_equals_k(seed in any::<u64>(), d in 1usize..8, k_off in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fx = gaussian(&mut rng, 100, d);
        let k = d - k_off.min(d - 1);
        let r = topk_correlation(&fx, &fx, k).unwrap();
        prop_assert!((r.top_k_sum - k as f64).abs() < 1e-6, "{}", r.top_k_sum);
    }

    #[test]
    fn logit_shift_keeps_predictions(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let x = Matrix::from_fn(60, 2, |i, j| (labels[i] as f64) * (j as f64 + 1.0) + rng.random_range(-1.0..1.0));
        let cfg = LogRegConfig { max_iter: 200, ..LogRegConfig::default() };
        let mut m = fit_logreg(&x, &labels, &cfg).unwrap();
        let before = predict_logreg(&m, &x).unwrap();
        m.bias.iter_mut().for_each(|b| *b += shift);
        prop_assert_eq!(predict_logreg(&m, &x).unwrap(), before);
    }

    #[test]
    fn srl_accuracy_ignores_dimension_permutation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..90).map(|i| i % 3).collect();
        let f = Matrix::from_fn(90, 4, |i, j| if j == labels[i] { 2.0 } else { 0.0 } + rng.sample::<f64, _>(StandardNormal));
        let perm = [2, 0, 3, 1];
        let e = EmbeddingSet::new("t", Some(f.clone()), Some(f.clone()));
        let p = EmbeddingSet::new("t", Some(f.select_cols(&perm)), Some(f.select_cols(&perm)));
        let cfg = LogRegConfig::default();
        let a = srl_evaluate(&e, &labels, &e, &labels, SrlDirection::X_TO_Y, &cfg).unwrap();
        let b = srl_evaluate(&p, &labels, &p, &labels, SrlDirection::X_TO_Y, &cfg).unwrap();
        prop_assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn retrieval_ignores_positive_rescaling(
        seed in any::<u64>(),
        scales in proptest::collection::vec(1e-3f64..1e3, 12),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let queries = gaussian(&mut rng, 8, 3);
        let classes = gaussian(&mut rng, 4, 3);
        let ids = [0, 1, 2, 3];
        let before: Vec<_> = cosine_retrieval_classify(&queries, &classes, &ids).unwrap().into_iter().map(|p| p.class_id).collect();
        let q2 = Matrix::from_fn(8, 3, |i, j| queries.get(i, j) * scales[i]);
        let c2 = Matrix::from_fn(4, 3, |i, j| classes.get(i, j) * scales[8 + i]);
        let after: Vec<_> = cosine_retrieval_classify(&q2, &c2, &ids).unwrap().into_iter().map(|p| p.class_id).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn halves_reassemble_exactly(seed in any::<u64>(), n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Matrix::from_fn(n, MNIST_PIXELS, |_, _| rng.random_range(0.0..1.0));
        let d = split_left_right(&img, None, SplitTag::Test).unwrap();
        prop_assert_eq!(reassemble_left_right(&d.x, &d.y).unwrap(), img);
    }

    #[test]
    fn batchnorm_eval_is_a_fixed_map(seed in any::<u64>(), n in 2usize..6, w in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bn = BatchNorm::new(w);
        bn.forward_train(&gaussian(&mut rng, n, w)).unwrap();
        let frozen = bn.clone();
        let x = gaussian(&mut rng, n, w);
        let a = bn.forward_eval(&x).unwrap();
        let b = bn.forward_eval(&x).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&bn.running_mean, &frozen.running_mean);
        prop_assert_eq!(&bn.running_var, &frozen.running_var);
    }

    #[test]
    fn matmul_variants_agree(seed in any::<u64>(), m in 1usize..7, k in 1usize..7, n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(&mut rng, m, k);
        let b = gaussian(&mut rng, k, n);
        let ab = a.matmul(&b).unwrap();
        prop_assert!(a.transpose().t_matmul(&b).unwrap().sub(&ab).unwrap().max_abs() < 1e-12);
        prop_assert!(a.matmul_t(&b.transpose()).unwrap().sub(&ab).unwrap().max_abs() < 1e-12);
    }
}
