mod common;

use common::rng;
use fewshot_gp::datasets::{
    generate_synthetic, grid_locations, load_sidecar, read_csv, sample_field, save_sidecar, write_csv, NormPolicy,
    SyntheticConfig,
};
use fewshot_gp::Matrix64;

#[test]
fn field_covariance_matches_the_kernel() {
    let locs = Matrix64::from_rows(&[vec![0.0, 0.0], vec![0.3, 0.0], vec![0.0, 0.7], vec![1.0, 1.0]]).unwrap();
    let (ell, amp) = (0.5, 1.3);
    let n = 20_000;
    let mut r = rng(41);
    let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_field(&locs, ell, amp, &mut r).unwrap()).collect();
    for i in 0..4 {
        for j in 0..4 {
            let emp = draws.iter().map(|d| d[i] * d[j]).sum::<f64>() / n as f64;
            let d2: f64 = locs.row(i).iter().zip(locs.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            let want = amp * amp * (-d2 / (2.0 * ell * ell)).exp();
            // four standard errors of a product moment
            let se = ((amp.powi(4) + want * want) / n as f64).sqrt();
            assert!((emp - want).abs() < 4.0 * se, "({i},{j}): {emp} vs {want}");
        }
    }
}

#[test]
fn long_length_scale_gives_a_flat_field() {
    let locs = grid_locations(8);
    let mut r = rng(42);
    let mut level = 0.0;
    for _ in 0..200 {
        let f = sample_field(&locs, 1e3, 1.0, &mut r).unwrap();
        let spread = f.iter().cloned().fold(f64::MIN, f64::max) - f.iter().cloned().fold(f64::MAX, f64::min);
        // the diagonal jitter of the near-rank-one covariance dominates the spread
        assert!(spread < 0.05, "spread {spread}");
        level += f[0] * f[0];
    }
    // the shared level still has unit variance
    assert!((level / 200.0 - 1.0).abs() < 0.3);
}

#[test]
fn benchmark_survives_a_csv_round_trip() {
    let cfg = SyntheticConfig {
        regions: 4,
        attributes: 3,
        grid: 5,
        ..SyntheticConfig::default()
    };
    let col = generate_synthetic(&cfg).unwrap();
    let mut buf = Vec::new();
    write_csv(&col, &mut buf).unwrap();
    let back = read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, col);
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("region_id,attribute_id,x1,x2,aux_1,y\n"));
}

#[test]
fn sidecar_records_invert_the_normalization() {
    let cfg = SyntheticConfig {
        regions: 2,
        attributes: 2,
        grid: 5,
        ..SyntheticConfig::default()
    };
    let raw = generate_synthetic(&cfg).unwrap();
    let norm = raw.normalize().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("normalization.json");
    save_sidecar(&norm, &path).unwrap();
    let records = load_sidecar(&path).unwrap();
    for t in norm.tasks() {
        let rec = &records[&t.region][&t.attribute];
        assert_eq!(rec.policy, NormPolicy::Offline);
        let src = raw.get(&t.region, &t.attribute).unwrap();
        for (n, r) in t.y.iter().zip(&src.y) {
            assert!((rec.denormalize_y(*n) - r).abs() <= 1e-12 * r.abs().max(1.0));
        }
        assert!(rec.denormalize_x(&t.x).max_abs_diff(&src.x) <= 1e-12);
        let mean = t.y.iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 1e-12);
    }
}
