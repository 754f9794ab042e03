#![allow(dead_code)]

use fewshot_gp::gp::{GpConfig, GpModel, MeanMode};
use fewshot_gp::model::SupportSet;
use fewshot_gp::nn::{Mlp, MlpSpec, POSITIVE_FLOOR};
use fewshot_gp::Matrix64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Inverse by Gauss–Jordan elimination with partial pivoting, plus the log
/// absolute determinant read off the pivots.
pub fn gauss_jordan(a: &Matrix64) -> (Matrix64, f64) {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    let mut logdet = 0.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap())
            .unwrap();
        m.swap(c, p);
        let piv = m[c][c];
        assert!(piv != 0.0, "singular matrix");
        logdet += piv.abs().ln();
        for v in m[c].iter_mut() {
            *v /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    let pivot_row = m[c].clone();
                    for (v, p) in m[r].iter_mut().zip(&pivot_row) {
                        *v -= f * p;
                    }
                }
            }
        }
    }
    let inv = Matrix64::from_fn(n, n, |i, j| m[i][n + j]);
    (inv, logdet)
}

pub fn matvec(a: &Matrix64, v: &[f64]) -> Vec<f64> {
    (0..a.rows())
        .map(|i| a.row(i).iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix64 {
    Matrix64::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn random_support(rng: &mut impl Rng, n: usize, dim: usize) -> SupportSet<f64> {
    let x = uniform_matrix(rng, n, dim, -2.0, 2.0);
    let y = uniform_matrix(rng, n, 1, -2.0, 2.0);
    SupportSet::new(x, y).unwrap()
}

pub fn random_gp(input_dim: usize, latent: usize, width: usize, seed: u64) -> GpModel<f64> {
    let mut c = GpConfig::new(input_dim, latent, vec![width, width]);
    c.dropout = 0.0;
    GpModel::new(c, seed).unwrap()
}

/// Posterior mean, variance and marginal log-likelihood assembled entry by
/// entry from the model's own mean and kernel functions and inverted with
/// Gauss–Jordan.
pub struct DenseOracle {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub log_marginal: f64,
}

pub fn dense_oracle(model: &GpModel<f64>, s: &SupportSet<f64>, q: &Matrix64) -> DenseOracle {
    let z = model.encode_task(s).unwrap();
    let n = s.len();
    let k = Matrix64::from_fn(n, n, |i, j| model.kernel(s.x.row(i), s.x.row(j), &z).unwrap());
    let m: Vec<f64> = (0..n).map(|i| model.mean_function(s.x.row(i), &z).unwrap()).collect();
    let r: Vec<f64> = (0..n).map(|i| s.y[(i, 0)] - m[i]).collect();
    let (kinv, logdet) = gauss_jordan(&k);
    let alpha = matvec(&kinv, &r);
    let mut mean = Vec::new();
    let mut variance = Vec::new();
    for a in 0..q.rows() {
        let kq: Vec<f64> = (0..n).map(|i| model.kernel(q.row(a), s.x.row(i), &z).unwrap()).collect();
        mean.push(model.mean_function(q.row(a), &z).unwrap() + dot(&kq, &alpha));
        let kqq = model.kernel(q.row(a), q.row(a), &z).unwrap();
        variance.push((kqq - dot(&kq, &matvec(&kinv, &kq))).max(0.0));
    }
    let log_marginal =
        -0.5 * dot(&r, &alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    DenseOracle {
        mean,
        variance,
        log_marginal,
    }
}

/// `softplus⁻¹(v − floor)`: the bias that makes a zero-weight positive head output `v`.
pub fn positive_bias(v: f64) -> f64 {
    let t = v - POSITIVE_FLOOR;
    assert!(t > 0.0);
    t + (-(-t).exp_m1()).ln()
}

/// Two-hidden-layer ReLU network whose output is `scale · x[..d]` padded with
/// zeros to `out` units. Uses `relu(x) − relu(−x) = x`.
pub fn linear_embed(input: usize, d: usize, out: usize, scale: f64) -> Mlp<f64> {
    let h = 2 * d;
    let spec = MlpSpec::new(input, &[h, h], out);
    let w1 = Matrix64::from_fn(input, h, |i, j| {
        if i < d && j == i {
            1.0
        } else if i < d && j == i + d {
            -1.0
        } else {
            0.0
        }
    });
    let w2 = Matrix64::identity(h);
    let w3 = Matrix64::from_fn(h, out, |i, j| {
        if i < d && j == i {
            scale
        } else if i >= d && j == i - d {
            -scale
        } else {
            0.0
        }
    });
    Mlp::from_layers(
        spec,
        vec![w1, w2, w3],
        vec![Matrix64::zeros(1, h), Matrix64::zeros(1, h), Matrix64::zeros(1, out)],
    )
    .unwrap()
}

/// Zero-weight positive head with constant output `v`.
pub fn constant_positive(input: usize, width: usize, v: f64) -> Mlp<f64> {
    let spec = MlpSpec::new(input, &[width, width], 1).positive();
    let w = vec![
        Matrix64::zeros(input, width),
        Matrix64::zeros(width, width),
        Matrix64::zeros(width, 1),
    ];
    let b = vec![
        Matrix64::zeros(1, width),
        Matrix64::zeros(1, width),
        Matrix64::scalar(positive_bias(v)),
    ];
    Mlp::from_layers(spec, w, b).unwrap()
}

/// GP whose embedding is `scale · x` (ignoring `z`), with a constant noise
/// level and the given mean mode. Encoder and mean weights are random.
pub fn structured_gp(input_dim: usize, latent: usize, width: usize, scale: f64, noise: f64, mode: MeanMode, seed: u64) -> GpModel<f64> {
    let mut c = GpConfig::new(input_dim, latent, vec![width, width]);
    c.dropout = 0.0;
    c.mean_mode = mode;
    let base = GpModel::<f64>::new(c.clone(), seed).unwrap();
    assert!(latent >= input_dim && width >= 2 * input_dim);
    let embed = linear_embed(input_dim + latent, input_dim, latent, scale);
    let noise_net = constant_positive(latent, width, noise);
    GpModel::from_parts(
        c,
        base.encoder().clone(),
        base.mean_net().cloned(),
        embed,
        noise_net,
    )
    .unwrap()
}
