use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Sample mean and standard error of the mean (`s / √n`, `s` with `n − 1`).
/// The standard error is 0 for fewer than two values.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    /// Mean of `a − b`.
    pub mean_diff: f64,
    pub t: f64,
    pub df: usize,
    /// Two-sided p-value.
    pub p_value: f64,
}

impl PairedTTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Two-sided paired t-test on `a[i] − b[i]` with `n − 1` degrees of freedom.
/// `None` when fewer than two pairs are given or the lengths differ.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<PairedTTest> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean_diff, se) = mean_se(&d);
    let df = d.len() - 1;
    if se == 0.0 {
        let (t, p_value) = if mean_diff == 0.0 {
            (0.0, 1.0)
        } else {
            (mean_diff.signum() * f64::INFINITY, 0.0)
        };
        return Some(PairedTTest { mean_diff, t, df, p_value });
    }
    let t = mean_diff / se;
    let dist = StudentsT::new(0.0, 1.0, df as f64).ok()?;
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Some(PairedTTest { mean_diff, t, df, p_value })
}
