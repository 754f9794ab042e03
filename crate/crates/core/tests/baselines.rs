mod common;

use common::*;
use fewshot_gp::autodiff::Eval;
use fewshot_gp::baselines::{FineTune, NnModel, NpModel};
use fewshot_gp::model::{EpisodicModel, SupportSet};
use fewshot_gp::Matrix64;

fn support_mse<M: EpisodicModel<f64>>(m: &M, s: &SupportSet<f64>) -> f64 {
    let p = m.predict(&mut Eval, s, &s.x, false, None).unwrap().mean.into_matrix();
    p.zip_map(&s.y, |a, b| (a - b) * (a - b)).sum() / s.len() as f64
}

#[test]
fn neural_process_does_not_interpolate() {
    // the decoder sees the support only through the pooled z, so an untrained
    // model misses its own support values while the GP reproduces them
    let mut r = rng(31);
    let mut gap = 0.0;
    for seed in 0..20 {
        let np = NpModel::<f64>::new(3, 8, &[16, 16], 0.0, false, seed).unwrap();
        let gp = random_gp(3, 8, 16, seed);
        let s = random_support(&mut r, 5, 3);
        gap += support_mse(&np, &s);
        assert!(support_mse(&gp, &s) < 1e-12);
    }
    assert!(gap / 20.0 > 0.1, "{}", gap / 20.0);
}

#[test]
fn zero_epoch_fine_tuning_is_the_plain_network() {
    let nn = NnModel::<f64>::new(3, &[16, 16], 0.0, false, 1).unwrap();
    let ft = nn.clone().with_fine_tune(FineTune { epochs: 0, lr: 1e-3 });
    let mut r = rng(32);
    let s = random_support(&mut r, 5, 3);
    let q = uniform_matrix(&mut r, 7, 3, -2.0, 2.0);
    let adapted = ft.adapt(&s).unwrap().unwrap();
    let a = nn.predict(&mut Eval, &s, &q, false, None).unwrap().mean.into_matrix();
    let b = adapted.predict(&mut Eval, &s, &q, false, None).unwrap().mean.into_matrix();
    assert_eq!(a, b);
}

#[test]
fn fine_tuning_fits_the_support_across_seeds() {
    let mut r = rng(33);
    for seed in 0..5 {
        let nn = NnModel::<f64>::new(3, &[16, 16], 0.1, false, seed).unwrap();
        let s = random_support(&mut r, 5, 3);
        let tuned = nn.fine_tuned(&s, FineTune { epochs: 300, lr: 1e-2 }).unwrap();
        let before = support_mse(&nn, &s);
        let after = support_mse(&tuned, &s);
        assert!(after < 0.5 * before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn plain_network_ignores_the_support() {
    let nn = NnModel::<f64>::new(3, &[16, 16], 0.0, false, 2).unwrap();
    let mut r = rng(34);
    let q = uniform_matrix(&mut r, 5, 3, -2.0, 2.0);
    let a = random_support(&mut r, 5, 3);
    let b = random_support(&mut r, 2, 3);
    let pa = nn.predict(&mut Eval, &a, &q, false, None).unwrap().mean.into_matrix();
    let pb = nn.predict(&mut Eval, &b, &q, false, None).unwrap().mean.into_matrix();
    assert_eq!(pa, pb);
    assert!(nn.adapt(&a).unwrap().is_none());
}

#[test]
fn neural_process_variance_is_positive() {
    let np = NpModel::<f64>::new(3, 8, &[16, 16], 0.0, true, 5).unwrap();
    let mut r = rng(35);
    let s = random_support(&mut r, 5, 3);
    let q = Matrix64::from_fn(50, 3, |i, j| (i as f64 * 0.37 + j as f64).sin() * 4.0);
    let v = np.predict(&mut Eval, &s, &q, true, None).unwrap().variance.unwrap().into_matrix();
    assert!(v.as_slice().iter().all(|&x| x > 0.0));
}
