use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Graph};
use crate::error::Result;
use crate::gp::identity_mask;
use crate::linalg::{JitterPolicy, Matrix};
use crate::model::{EpisodicModel, ModelKind, Prediction, PredictiveDistribution, SupportSet};
use crate::scalar::Scalar;

/// Zero-mean GP with a shared Gaussian kernel
/// `σ_f² exp(−‖x − x'‖² / (2ℓ²)) + σ_n² δ`. The three hyperparameters are
/// stored as logs (`log σ_f²`, `log ℓ`, `log σ_n²`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GprModel<T> {
    input_dim: usize,
    log_signal_var: Matrix<T>,
    log_length_scale: Matrix<T>,
    log_noise_var: Matrix<T>,
    pub jitter: JitterPolicy,
}

impl<T: Scalar> GprModel<T> {
    pub fn new(input_dim: usize, signal_var: f64, length_scale: f64, noise_var: f64) -> Self {
        Self {
            input_dim,
            log_signal_var: Matrix::scalar(T::lit(signal_var.ln())),
            log_length_scale: Matrix::scalar(T::lit(length_scale.ln())),
            log_noise_var: Matrix::scalar(T::lit(noise_var.ln())),
            jitter: JitterPolicy::default(),
        }
    }

    pub fn signal_var(&self) -> T {
        self.log_signal_var.item().exp()
    }

    pub fn length_scale(&self) -> T {
        self.log_length_scale.item().exp()
    }

    pub fn noise_var(&self) -> T {
        self.log_noise_var.item().exp()
    }

    fn scaled_rbf<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        a: &Matrix<T>,
        b: &Matrix<T>,
        signal: &G::Var,
        coef: &G::Var,
    ) -> Result<G::Var> {
        let (av, bv) = (g.constant(a.clone())?, g.constant(b.clone())?);
        let d = g.sqdist(&av, &bv)?;
        let scaled = g.mul(&d, coef)?;
        let neg = g.neg(&scaled)?;
        let e = g.exp(&neg)?;
        g.mul(&e, signal)
    }

    fn hyper_vars<'p, G: Graph<'p, T>>(&'p self, g: &mut G) -> Result<(G::Var, G::Var, G::Var)> {
        let ls = g.param(&self.log_signal_var);
        let ll = g.param(&self.log_length_scale);
        let ln = g.param(&self.log_noise_var);
        let signal = g.exp(&ls)?;
        let noise = g.exp(&ln)?;
        let m2 = g.scale(&ll, T::lit(-2.0))?;
        let inv_l2 = g.exp(&m2)?;
        let coef = g.scale(&inv_l2, T::lit(0.5))?;
        Ok((signal, noise, coef))
    }

    fn support_kernel<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        x: &Matrix<T>,
        signal: &G::Var,
        noise: &G::Var,
        coef: &G::Var,
    ) -> Result<G::Var> {
        let kss = self.scaled_rbf(g, x, x, signal, coef)?;
        let eye = g.constant(Matrix::identity(x.rows()))?;
        let diag = g.mul(&eye, noise)?;
        g.add(&kss, &diag)
    }

    pub fn predict_distribution(
        &self,
        support: &SupportSet<T>,
        query_x: &Matrix<T>,
    ) -> Result<Vec<PredictiveDistribution<T>>> {
        let p = self.predict(&mut Eval, support, query_x, true, None)?;
        let mean = p.mean.into_matrix();
        let var = p.variance.expect("requested").into_matrix();
        Ok(mean
            .as_slice()
            .iter()
            .zip(var.as_slice())
            .map(|(&mean, &variance)| PredictiveDistribution { mean, variance })
            .collect())
    }
}

impl<T: Scalar> EpisodicModel<T> for GprModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Gpr
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn has_variance(&self) -> bool {
        true
    }

    fn tensors(&self) -> Vec<&Matrix<T>> {
        vec![&self.log_signal_var, &self.log_length_scale, &self.log_noise_var]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        vec![
            &mut self.log_signal_var,
            &mut self.log_length_scale,
            &mut self.log_noise_var,
        ]
    }

    fn predict<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        support: &SupportSet<T>,
        query_x: &Matrix<T>,
        with_variance: bool,
        _rng: Option<&mut dyn RngCore>,
    ) -> Result<Prediction<G::Var>> {
        self.check_input(&support.x)?;
        self.check_input(query_x)?;
        let (signal, noise, coef) = self.hyper_vars(g)?;
        let kernel = self.support_kernel(g, &support.x, &signal, &noise, &coef)?;

        let kqs = self.scaled_rbf(g, query_x, &support.x, &signal, &coef)?;
        let mask = identity_mask(query_x, &support.x);
        let cross = if mask.as_slice().iter().any(|&v| v != T::zero()) {
            let mv = g.constant(mask)?;
            let nm = g.mul(&mv, &noise)?;
            g.add(&kqs, &nm)?
        } else {
            kqs
        };

        let y = g.constant(support.y.clone())?;
        let alpha = g.cholesky_solve(&kernel, &y, self.jitter)?;
        let mean = g.matmul(&cross, &alpha)?;
        let variance = if with_variance {
            let ct = g.transpose(&cross)?;
            let solved = g.cholesky_solve(&kernel, &ct, self.jitter)?;
            let prod = g.mul(&ct, &solved)?;
            let row = g.sum_rows(&prod)?;
            let quad = g.transpose(&row)?;
            let prior = g.add(&signal, &noise)?;
            let raw = g.sub(&prior, &quad)?;
            Some(g.clamp_min(&raw, T::zero())?)
        } else {
            None
        };
        Ok(Prediction { mean, variance })
    }

    fn marginal_log_likelihood<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        support: &SupportSet<T>,
        _rng: Option<&mut dyn RngCore>,
    ) -> Result<G::Var> {
        self.check_input(&support.x)?;
        let (signal, noise, coef) = self.hyper_vars(g)?;
        let kernel = self.support_kernel(g, &support.x, &signal, &noise, &coef)?;
        let y = g.constant(support.y.clone())?;
        let alpha = g.cholesky_solve(&kernel, &y, self.jitter)?;
        let fit = g.dot(&y, &alpha)?;
        let logdet = g.log_det(&kernel, self.jitter)?;
        let both = g.add(&fit, &logdet)?;
        let half = g.scale(&both, T::lit(-0.5))?;
        let n = support.len() as f64;
        let c = g.scalar(T::lit(-0.5 * n * (2.0 * std::f64::consts::PI).ln()))?;
        g.add(&half, &c)
    }
}
