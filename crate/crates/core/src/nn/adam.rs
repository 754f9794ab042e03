use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AdamState<T> {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[&Matrix<T>]) -> Self {
        let zeros: Vec<Matrix<T>> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update. Nothing is modified if any gradient
    /// is non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut [&mut Matrix<T>], grads: &[Matrix<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: (self.m.len(), 1),
                rhs: (params.len(), grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { index: i });
            }
        }

        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let bc1 = one - T::lit(c.beta1.powi(self.t as i32));
        let bc2 = one - T::lit(c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let ps = p.as_mut_slice();
            let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
            for (k, &gk) in g.as_slice().iter().enumerate() {
                ms[k] = b1 * ms[k] + (one - b1) * gk;
                vs[k] = b2 * vs[k] + (one - b2) * gk * gk;
                let mhat = ms[k] / bc1;
                let vhat = vs[k] / bc2;
                ps[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut theta = Matrix::<f64>::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let before = theta.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &[&theta]);
        for _ in 0..5 {
            adam.step(&mut [&mut theta], &[Matrix::zeros(1, 2)]).unwrap();
        }
        assert_eq!(theta, before);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_by_hand() {
        let mut theta = Matrix::<f64>::scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &[&theta]);
        adam.step(&mut [&mut theta], &[Matrix::scalar(1.0)]).unwrap();
        let expected = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8));
        assert!((theta.item() - expected).abs() < 1e-15);
        assert!((theta.item() - 0.999).abs() < 1e-10);
    }

    #[test]
    fn scalar_quadratic_descends() {
        let mut theta = Matrix::<f64>::scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &[&theta]);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let x = theta.item();
            losses.push(x * x);
            adam.step(&mut [&mut theta], &[Matrix::scalar(2.0 * x)]).unwrap();
        }
        assert!(theta.item().abs() < 0.9);
        assert!(losses.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut a = Matrix::<f64>::scalar(1.0);
        let mut b = Matrix::<f64>::scalar(2.0);
        let mut adam = AdamState::new(AdamConfig::default(), &[&a, &b]);
        let err = adam
            .step(&mut [&mut a, &mut b], &[Matrix::scalar(0.1), Matrix::scalar(f64::NAN)])
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1 }));
        assert_eq!(a.item(), 1.0);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn update_is_per_tensor() {
        // reversing tensor order must give the same per-tensor result
        let g1 = Matrix::<f64>::from_rows(&[vec![0.3, -0.2]]).unwrap();
        let g2 = Matrix::<f64>::scalar(4.0);
        let (mut a1, mut b1) = (Matrix::<f64>::zeros(1, 2), Matrix::<f64>::scalar(1.0));
        let (mut a2, mut b2) = (a1.clone(), b1.clone());
        let mut s1 = AdamState::new(AdamConfig::default(), &[&a1, &b1]);
        let mut s2 = AdamState::new(AdamConfig::default(), &[&b2, &a2]);
        for _ in 0..3 {
            s1.step(&mut [&mut a1, &mut b1], &[g1.clone(), g2.clone()]).unwrap();
            s2.step(&mut [&mut b2, &mut a2], &[g2.clone(), g1.clone()]).unwrap();
        }
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }
}
