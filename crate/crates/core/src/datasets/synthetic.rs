use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DatasetCollection, TaskDataset};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};

/// Closed interval `[lo, hi]`, written `[lo, hi]` in config files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn uniform(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    fn log_uniform(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo.ln()..=self.hi.ln()).exp()
        }
    }
}

impl From<[f64; 2]> for Range {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.lo, r.hi]
    }
}

/// Parameters of the synthetic benchmark. Each (region, attribute) task is a
/// Gaussian random field on a `grid x grid` lattice over `[-1, 1]²` plus a
/// linear-and-sinusoid trend, an auxiliary-feature effect and white noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub regions: usize,
    pub attributes: usize,
    /// Points per axis.
    pub grid: usize,
    /// Largest accepted `grid`; the field covariance is `grid² x grid²`.
    pub grid_cap: usize,
    /// Smooth region-level covariates (elevation-like), shared by all
    /// attributes of a region.
    pub aux_dim: usize,
    /// Sampled log-uniformly.
    pub length_scale: Range,
    pub amplitude: Range,
    /// Coefficients of the two coordinates in the trend.
    pub linear: Range,
    pub sinusoid_amplitude: Range,
    pub sinusoid_frequency: Range,
    /// Coefficient of each auxiliary feature in the trend.
    pub aux_effect: Range,
    pub noise_std: Range,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            regions: 60,
            attributes: 9,
            grid: 16,
            grid_cap: 16,
            aux_dim: 1,
            length_scale: Range::new(0.3, 1.5),
            amplitude: Range::new(0.5, 1.5),
            linear: Range::new(-1.0, 1.0),
            sinusoid_amplitude: Range::new(0.0, 1.0),
            sinusoid_frequency: Range::new(0.5, 3.0),
            aux_effect: Range::new(0.5, 1.5),
            noise_std: Range::new(0.01, 0.1),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions == 0 || self.attributes == 0 {
            return Err(Error::Config("regions and attributes must be positive".into()));
        }
        if self.grid < 2 {
            return Err(Error::Config("grid must have at least 2 points per axis".into()));
        }
        if self.grid > self.grid_cap {
            return Err(Error::Config(format!(
                "grid {} exceeds the cap {} (dense {}x{} covariance); use a smaller grid",
                self.grid,
                self.grid_cap,
                self.grid * self.grid,
                self.grid * self.grid
            )));
        }
        let ranges = [
            ("length_scale", self.length_scale),
            ("amplitude", self.amplitude),
            ("linear", self.linear),
            ("sinusoid_amplitude", self.sinusoid_amplitude),
            ("sinusoid_frequency", self.sinusoid_frequency),
            ("aux_effect", self.aux_effect),
            ("noise_std", self.noise_std),
        ];
        for (name, r) in ranges {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                return Err(Error::Config(format!("{name} range [{}, {}] is invalid", r.lo, r.hi)));
            }
        }
        if self.length_scale.lo <= 0.0 {
            return Err(Error::Config("length_scale must be positive".into()));
        }
        if self.amplitude.lo < 0.0 || self.noise_std.lo < 0.0 {
            return Err(Error::Config("amplitude and noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Row-major `G² x 2` lattice over `[-1, 1]²`.
pub fn grid_locations(g: usize) -> Matrix<f64> {
    let coord = |k: usize| -1.0 + 2.0 * k as f64 / (g - 1) as f64;
    Matrix::from_fn(g * g, 2, |i, j| if j == 0 { coord(i / g) } else { coord(i % g) })
}

/// One draw of a zero-mean field with covariance
/// `amplitude² · exp(−‖u − u'‖² / (2ℓ²))` at the rows of `locations`.
pub fn sample_field(locations: &Matrix<f64>, length_scale: f64, amplitude: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let n = locations.rows();
    if amplitude == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let chol = unit_field_factor(locations, length_scale)?;
    let eps = Matrix::column((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    let draw = chol.l().matmul(&eps)?;
    Ok(draw.into_vec().into_iter().map(|v| amplitude * v).collect())
}

fn unit_field_factor(locations: &Matrix<f64>, length_scale: f64) -> Result<Cholesky<f64>> {
    let n = locations.rows();
    let inv = 1.0 / (2.0 * length_scale * length_scale);
    let cov = Matrix::from_fn(n, n, |i, j| {
        let d2: f64 = locations
            .row(i)
            .iter()
            .zip(locations.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (-d2 * inv).exp()
    });
    let mut jitter = 1e-8;
    loop {
        match Cholesky::factor_with(&cov, jitter) {
            Ok(c) => return Ok(c),
            Err(e) if jitter >= 1e-4 => return Err(e),
            Err(_) => jitter *= 10.0,
        }
    }
}

fn task_seed(seed: u64, region: u64, attribute: u64) -> u64 {
    // splitmix64 over the three words
    let mut z = seed;
    for w in [region, attribute] {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(w);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Builds the raw (unnormalized) benchmark. Region ids are `r000..`,
/// attribute ids `a0..`. Each task draws its own parameters from a seed
/// derived from `(seed, region, attribute)`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<DatasetCollection> {
    cfg.validate()?;
    let base = grid_locations(cfg.grid);
    let n = base.rows();
    let mut col = DatasetCollection::new(cfg.aux_dim);
    for r in 0..cfg.regions {
        let mut region_rng = ChaCha8Rng::seed_from_u64(task_seed(cfg.seed, r as u64, u64::MAX));
        let mut aux = Vec::with_capacity(cfg.aux_dim);
        for _ in 0..cfg.aux_dim {
            aux.push(sample_field(&base, 0.5, 1.0, &mut region_rng)?);
        }
        let x = Matrix::from_fn(n, 2 + cfg.aux_dim, |i, j| if j < 2 { base[(i, j)] } else { aux[j - 2][i] });

        for c in 0..cfg.attributes {
            let mut rng = ChaCha8Rng::seed_from_u64(task_seed(cfg.seed, r as u64, c as u64));
            let ell = cfg.length_scale.log_uniform(&mut rng);
            let amp = cfg.amplitude.uniform(&mut rng);
            let (b1, b2) = (cfg.linear.uniform(&mut rng), cfg.linear.uniform(&mut rng));
            let sin_amp = cfg.sinusoid_amplitude.uniform(&mut rng);
            let freq = cfg.sinusoid_frequency.uniform(&mut rng);
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let effects: Vec<f64> = (0..cfg.aux_dim).map(|_| cfg.aux_effect.uniform(&mut rng)).collect();
            let noise = cfg.noise_std.uniform(&mut rng);

            let field = sample_field(&base, ell, amp, &mut rng)?;
            let (ct, st) = (theta.cos(), theta.sin());
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    let (u1, u2) = (base[(i, 0)], base[(i, 1)]);
                    let trend = b1 * u1 + b2 * u2 + sin_amp * (freq * (ct * u1 + st * u2) + phase).sin();
                    let aux_term: f64 = effects.iter().zip(&aux).map(|(e, a)| e * a[i]).sum();
                    let eps: f64 = if noise > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                    field[i] + trend + aux_term + noise * eps
                })
                .collect();
            col.insert(TaskDataset::new(format!("r{r:03}"), format!("a{c}"), x.clone(), y)?)?;
        }
    }
    Ok(col)
}
