mod common;

use common::*;
use fewshot_gp::baselines::GprModel;
use fewshot_gp::gp::MeanMode;
use fewshot_gp::model::{EpisodicModel, SupportSet};
use fewshot_gp::autodiff::Eval;
use fewshot_gp::Matrix64;
use rand::Rng;

#[test]
fn posterior_matches_dense_inverse() {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let m = random_gp(3, 8, 16, inst);
        let s = random_support(&mut r, 5, 3);
        let mut q = uniform_matrix(&mut r, 6, 3, -2.5, 2.5);
        // one query on top of a support point
        for j in 0..3 {
            q[(0, j)] = s.x[(2, j)];
        }
        let oracle = dense_oracle(&m, &s, &q);
        let post = m.fit_posterior(&s).unwrap();
        let pred = m.predict_posterior(&post, &q).unwrap();
        for (p, (om, ov)) in pred.iter().zip(oracle.mean.iter().zip(&oracle.variance)) {
            worst = worst.max(rel_err(p.mean, *om)).max(rel_err(p.variance, *ov));
        }
        let mll = m.marginal_log_likelihood_value(&s).unwrap();
        worst = worst.max(rel_err(mll, oracle.log_marginal));
    }
    assert!(worst <= 1e-8, "max relative error {worst:e}");
}

#[test]
fn gpr_matches_dense_inverse() {
    let mut r = rng(12);
    for _ in 0..50 {
        let sf = r.random_range(0.3..2.0);
        let ell = r.random_range(0.2..2.0);
        let sn = r.random_range(0.01..0.5);
        let m = GprModel::<f64>::new(2, sf, ell, sn);
        let s = random_support(&mut r, 5, 2);
        let q = uniform_matrix(&mut r, 4, 2, -2.0, 2.0);
        let k = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            sf * (-d / (2.0 * ell * ell)).exp() + if a == b { sn } else { 0.0 }
        };
        let kss = Matrix64::from_fn(5, 5, |i, j| k(s.x.row(i), s.x.row(j)));
        let (inv, logdet) = gauss_jordan(&kss);
        let y = s.y.as_slice();
        let alpha = matvec(&inv, y);
        let pred = m.predict_distribution(&s, &q).unwrap();
        for (a, p) in pred.iter().enumerate() {
            let kq: Vec<f64> = (0..5).map(|i| k(q.row(a), s.x.row(i))).collect();
            assert!(rel_err(p.mean, dot(&kq, &alpha)) <= 1e-9);
            let v = sf + sn - dot(&kq, &matvec(&inv, &kq));
            assert!(rel_err(p.variance, v) <= 1e-9);
        }
        let mll = m.marginal_log_likelihood(&mut Eval, &s, None).unwrap().into_matrix().item();
        let want = -0.5 * dot(y, &alpha) - 0.5 * logdet - 2.5 * (2.0 * std::f64::consts::PI).ln();
        assert!(rel_err(mll, want) <= 1e-9);
    }
}

#[test]
fn single_point_interpolates_exactly() {
    let mut r = rng(13);
    for inst in 0..100 {
        let m = random_gp(3, 8, 16, 1000 + inst);
        let s = random_support(&mut r, 1, 3);
        let pred = m.predict_posterior(&m.fit_posterior(&s).unwrap(), &s.x).unwrap()[0];
        assert!((pred.mean - s.y.item()).abs() <= 1e-12);
        assert!(pred.variance.abs() <= 1e-12);
    }
}

#[test]
fn support_points_interpolate_at_noise_floor() {
    let mut r = rng(14);
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let mut m = random_gp(3, 8, 16, 2000 + inst);
        let out = m.noise_net_mut().tensors_mut().pop().unwrap();
        *out = Matrix64::scalar(-60.0);
        let s = random_support(&mut r, 5, 3);
        let post = m.fit_posterior(&s).unwrap();
        assert!(post.noise < 2e-6);
        for (p, y) in m.predict_posterior(&post, &s.x).unwrap().iter().zip(s.y.as_slice()) {
            worst = worst.max((p.mean - y).abs());
        }
    }
    assert!(worst <= 1e-3, "{worst:e}");
}

#[test]
fn duplicated_locations_factor_cleanly() {
    let mut r = rng(15);
    for inst in 0..200 {
        let m = random_gp(3, 8, 16, 3000 + inst);
        let mut s = random_support(&mut r, 6, 3);
        for j in 0..3 {
            s.x[(1, j)] = s.x[(0, j)];
            s.x[(4, j)] = s.x[(0, j)];
        }
        let post = m.fit_posterior(&s).unwrap();
        assert!(post.alpha.is_finite());
    }
}

#[test]
fn far_queries_fall_back_to_the_prior() {
    let mut r = rng(16);
    for inst in 0..50 {
        let m = structured_gp(3, 8, 16, 1e3, r.random_range(0.01..1.0), MeanMode::Full, inst);
        let s = random_support(&mut r, 5, 3);
        let q = Matrix64::from_fn(4, 3, |i, j| s.x[(i, j)] + 0.05 * (1.0 + i as f64));
        let post = m.fit_posterior(&s).unwrap();
        let e_s = m.embed(&s.x, &post.z).unwrap();
        let e_q = m.embed(&q, &post.z).unwrap();
        for a in 0..q.rows() {
            for b in 0..s.len() {
                let d: f64 = e_q.row(a).iter().zip(e_s.row(b)).map(|(u, v)| (u - v).powi(2)).sum();
                assert!(d.sqrt() > 6.0);
            }
        }
        let b = m.noise_level(&post.z).unwrap();
        for (a, p) in m.predict_posterior(&post, &q).unwrap().iter().enumerate() {
            let prior = m.mean_function(q.row(a), &post.z).unwrap();
            assert!((p.mean - prior).abs() <= 1e-10);
            assert!((p.variance - (1.0 + b)).abs() <= 1e-10);
        }
    }
}

/// With an embedding `x / (√2 ℓ)`, a constant noise head and a zero mean,
/// the neural GP is exactly the stationary GP regressor.
#[test]
fn reduces_to_gp_regression() {
    let mut r = rng(17);
    for inst in 0..30 {
        let ell = r.random_range(0.3..2.0);
        let noise = r.random_range(0.01..0.5);
        let gp = structured_gp(2, 4, 8, 1.0 / (2f64.sqrt() * ell), noise, MeanMode::ZeroMean, inst);
        let gpr = GprModel::<f64>::new(2, 1.0, ell, noise);
        let s = random_support(&mut r, 5, 2);
        let mut q = uniform_matrix(&mut r, 6, 2, -2.0, 2.0);
        q[(0, 0)] = s.x[(3, 0)];
        q[(0, 1)] = s.x[(3, 1)];
        let a = gp.predict_posterior(&gp.fit_posterior(&s).unwrap(), &q).unwrap();
        let b = gpr.predict_distribution(&s, &q).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u.mean - v.mean).abs() <= 1e-10, "{} vs {}", u.mean, v.mean);
            assert!((u.variance - v.variance).abs() <= 1e-10);
        }
        let ml_gp = gp.marginal_log_likelihood_value(&s).unwrap();
        let ml_gpr = gpr.marginal_log_likelihood(&mut Eval, &s, None).unwrap().into_matrix().item();
        assert!((ml_gp - ml_gpr).abs() <= 1e-10);
    }
}

#[test]
fn single_precision_tracks_double() {
    let m = random_gp(3, 8, 16, 5);
    let mut r = rng(18);
    let s = random_support(&mut r, 5, 3);
    let q = uniform_matrix(&mut r, 5, 3, -2.0, 2.0);
    let a = m.predict_posterior(&m.fit_posterior(&s).unwrap(), &q).unwrap();
    let m32 = m.cast::<f32>();
    let s32 = SupportSet::new(s.x.cast(), s.y.cast()).unwrap();
    let b = m32.predict_posterior(&m32.fit_posterior(&s32).unwrap(), &q.cast()).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u.mean - v.mean as f64).abs() < 1e-3);
    }
}
