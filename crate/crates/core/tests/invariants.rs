mod common;

use common::*;
use fewshot_gp::datasets::{split, DatasetCollection, NormalizationRecord, TaskDataset};
use fewshot_gp::gp::{GpConfig, GpModel, MeanMode};
use fewshot_gp::linalg::{Cholesky, JitterPolicy};
use fewshot_gp::model::SupportSet;
use fewshot_gp::Matrix64;
use proptest::prelude::*;

fn support_strategy(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..3.0, n * 3),
            prop::collection::vec(-3.0f64..3.0, n),
        )
    })
}

fn support_of(x: Vec<f64>, y: Vec<f64>) -> SupportSet<f64> {
    let n = y.len();
    SupportSet::new(Matrix64::from_vec(n, 3, x).unwrap(), Matrix64::column(y)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_matrix_factors_with_duplicates(
        seed in 0u64..10_000,
        (x, y) in support_strategy(8),
        dup in 0usize..8,
        mode in prop::sample::select(vec![MeanMode::Full, MeanMode::NoSupportMean, MeanMode::ZeroMean]),
    ) {
        let mut c = GpConfig::new(3, 8, vec![16, 16]);
        c.mean_mode = mode;
        let m = GpModel::<f64>::new(c, seed).unwrap();
        let mut s = support_of(x, y);
        let n = s.len();
        let (a, b) = (dup % n, (dup + 1) % n);
        for j in 0..3 {
            s.x[(b, j)] = s.x[(a, j)];
        }
        let post = m.fit_posterior(&s).unwrap();
        prop_assert!(post.alpha.is_finite());
        prop_assert!(post.kernel.is_symmetric(0.0));
        let q = Matrix64::from_fn(3, 3, |i, j| (i as f64 - 1.0) * 0.7 + j as f64 * 0.1);
        for p in m.predict_posterior(&post, &q).unwrap() {
            prop_assert!(p.mean.is_finite());
            prop_assert!(p.variance >= 0.0);
            prop_assert!(p.variance <= 1.0 + post.noise + 1e-12);
        }
    }

    #[test]
    fn predictions_ignore_support_order(seed in 0u64..1000, (x, y) in support_strategy(6), shift in 0usize..6) {
        let m = random_gp(3, 8, 16, seed);
        let s = support_of(x, y);
        let n = s.len();
        let px = Matrix64::from_fn(n, 3, |i, j| s.x[((i + shift) % n, j)]);
        let py = Matrix64::from_fn(n, 1, |i, _| s.y[((i + shift) % n, 0)]);
        let s2 = SupportSet::new(px, py).unwrap();
        let q = Matrix64::from_fn(4, 3, |i, j| i as f64 * 0.4 - j as f64 * 0.3);
        let a = m.predict_posterior(&m.fit_posterior(&s).unwrap(), &q).unwrap();
        let b = m.predict_posterior(&m.fit_posterior(&s2).unwrap(), &q).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u.mean - v.mean).abs() <= 1e-9 * u.mean.abs().max(1.0));
            prop_assert!((u.variance - v.variance).abs() <= 1e-9);
        }
    }

    #[test]
    fn cholesky_reconstructs(n in 1usize..12, seed in 0u64..1000) {
        let mut r = rng(seed);
        let b = uniform_matrix(&mut r, n, n, -1.0, 1.0);
        let a = b.matmul_nt(&b).unwrap().zip_map(&Matrix64::identity(n), |u, v| u + 0.1 * v);
        let c = Cholesky::factor(&a, &JitterPolicy::default()).unwrap();
        let back = c.l().matmul_nt(c.l()).unwrap();
        prop_assert!(back.max_abs_diff(&a) <= 1e-12 * n as f64);
        let (inv, logdet) = gauss_jordan(&a);
        prop_assert!(c.inverse().max_abs_diff(&inv) <= 1e-8 * inv.frobenius_norm().max(1.0));
        prop_assert!((c.log_det() - logdet).abs() <= 1e-9 * logdet.abs().max(1.0));
    }

    #[test]
    fn normalization_round_trips(
        values in prop::collection::vec(-1e3f64..1e3, 4..40),
        support in prop::collection::btree_set(0usize..4, 2..4),
    ) {
        let n = values.len();
        let x = Matrix64::from_fn(n, 3, |i, j| values[(i + j) % n] * (j as f64 + 1.0));
        let t = TaskDataset::new("r", "a", x.clone(), values.clone()).unwrap();
        let idx: Vec<usize> = support.into_iter().collect();
        for rec in [NormalizationRecord::offline(&t), NormalizationRecord::support_only(&t, &idx)] {
            let back = rec.denormalize_x(&rec.normalize_x(&x));
            prop_assert!(back.max_abs_diff(&x) <= 1e-9 * 1e3);
            for &v in &values {
                prop_assert!((rec.denormalize_y(rec.normalize_y(v)) - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
            prop_assert!((rec.denormalize_variance(rec.normalize_variance(2.5)) - 2.5).abs() <= 1e-9);
        }
    }

    #[test]
    fn split_partitions_regions_and_attributes(seed in 0u64..500, regions in 10usize..30, attrs in 10usize..16) {
        let mut col = DatasetCollection::new(1);
        for r in 0..regions {
            for a in 0..attrs {
                let x = Matrix64::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
                col.insert(TaskDataset::new(format!("r{r}"), format!("a{a}"), x, vec![0.0, 1.0, 2.0, 3.0]).unwrap()).unwrap();
            }
        }
        let s = split(&col, [0.5, 0.2, 0.3], [0.4, 0.3, 0.3], seed).unwrap();
        for k in 0..3 {
            prop_assert!(!s.regions[k].is_empty() && !s.attributes[k].is_empty());
            for l in k + 1..3 {
                prop_assert!(s.regions[k].is_disjoint(&s.regions[l]));
                prop_assert!(s.attributes[k].is_disjoint(&s.attributes[l]));
            }
        }
        prop_assert_eq!(s.regions.iter().map(|r| r.len()).sum::<usize>(), regions);
        for t in s.target.tasks() {
            prop_assert!(s.regions[2].contains(&t.region) && s.attributes[2].contains(&t.attribute));
        }
    }
}
