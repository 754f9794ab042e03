//! Task-conditioned Gaussian process with neural mean and kernel functions.
//!
//! A support set is encoded pair by pair with `f_z` and mean-pooled into the
//! task representation `z`. The prior mean is `f_m([x, z])`, the kernel is
//! a Gaussian kernel on the embeddings `f_k([x, z])` plus a noise term
//! `f_b(z)` on identical locations. Prediction is the exact GP posterior.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Graph};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, JitterPolicy, Matrix};
use crate::model::{reborrow, EpisodicModel, ModelKind, Prediction, PredictiveDistribution, SupportSet};
use crate::nn::{Mlp, MlpSpec};
use crate::scalar::Scalar;

/// Which prior mean the model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    /// `f_m([x, z])`
    Full,
    /// `f_m(x)`, blind to the support set.
    NoSupportMean,
    /// Constant zero.
    ZeroMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// Location-vector width (2 coordinates + auxiliary features).
    pub input_dim: usize,
    /// Width of `z` and of the kernel embedding.
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub mean_mode: MeanMode,
    /// Include the noise term in the query/support cross-covariance when a
    /// query coincides exactly with a support location.
    pub literal_delta: bool,
    pub jitter: JitterPolicy,
}

impl GpConfig {
    pub fn new(input_dim: usize, latent_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            input_dim,
            latent_dim,
            hidden,
            dropout: 0.1,
            mean_mode: MeanMode::Full,
            literal_delta: true,
            jitter: JitterPolicy::default(),
        }
    }

    pub fn encoder_spec(&self) -> MlpSpec {
        MlpSpec::new(self.input_dim + 1, &self.hidden, self.latent_dim).with_dropout(self.dropout)
    }

    pub fn mean_spec(&self) -> Option<MlpSpec> {
        let input = match self.mean_mode {
            MeanMode::Full => self.input_dim + self.latent_dim,
            MeanMode::NoSupportMean => self.input_dim,
            MeanMode::ZeroMean => return None,
        };
        Some(MlpSpec::new(input, &self.hidden, 1).with_dropout(self.dropout))
    }

    pub fn embed_spec(&self) -> MlpSpec {
        MlpSpec::new(self.input_dim + self.latent_dim, &self.hidden, self.latent_dim)
            .with_dropout(self.dropout)
    }

    pub fn noise_spec(&self) -> MlpSpec {
        MlpSpec::new(self.latent_dim, &self.hidden, 1)
            .with_dropout(self.dropout)
            .positive()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GpModel<T> {
    config: GpConfig,
    encoder: Mlp<T>,
    mean: Option<Mlp<T>>,
    embed: Mlp<T>,
    noise: Mlp<T>,
}

/// Graph-level posterior: everything the predictive equations need from
/// the support set, computed once per episode.
pub struct PosteriorVars<V> {
    pub z: V,
    pub support_mean: V,
    pub support_embed: V,
    pub noise: V,
    pub kernel: V,
    pub residual: V,
    pub alpha: V,
}

/// Support-set posterior with plain values.
#[derive(Clone, Debug)]
pub struct GpPosterior<T> {
    pub z: Matrix<T>,
    /// `N_S x N_S`, `K_nn' = k(x_n, x_n'; z)`.
    pub kernel: Matrix<T>,
    pub chol: Cholesky<T>,
    /// `K⁻¹ (y − m)`.
    pub alpha: Matrix<T>,
    /// Prior mean at the support locations.
    pub mean: Matrix<T>,
    pub noise: T,
    support_x: Matrix<T>,
    support_y: Matrix<T>,
    embeddings: Matrix<T>,
}

/// `E_ij = 1` iff row `i` of `a` equals row `j` of `b` in every component.
pub fn identity_mask<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        if a.row(i) == b.row(j) {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// `exp(−‖e_i − e'_j‖²) + noise · E_ij`
fn kernel_block<'p, T: Scalar, G: Graph<'p, T>>(
    g: &mut G,
    ea: &G::Var,
    eb: &G::Var,
    noise: &G::Var,
    mask: Option<Matrix<T>>,
) -> Result<G::Var> {
    let d = g.sqdist(ea, eb)?;
    let nd = g.neg(&d)?;
    let k = g.exp(&nd)?;
    match mask {
        Some(m) if m.as_slice().iter().any(|&v| v != T::zero()) => {
            let mv = g.constant(m)?;
            let nm = g.mul(&mv, noise)?;
            g.add(&k, &nm)
        }
        _ => Ok(k),
    }
}

impl<T: Scalar> GpModel<T> {
    pub fn new(config: GpConfig, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::init_with(config.encoder_spec(), &mut rng)?;
        let mean = match config.mean_spec() {
            Some(s) => Some(Mlp::init_with(s, &mut rng)?),
            None => None,
        };
        let embed = Mlp::init_with(config.embed_spec(), &mut rng)?;
        let noise = Mlp::init_with(config.noise_spec(), &mut rng)?;
        Ok(Self {
            config,
            encoder,
            mean,
            embed,
            noise,
        })
    }

    /// Assembles a model from explicit networks, checking their shapes.
    pub fn from_parts(
        config: GpConfig,
        encoder: Mlp<T>,
        mean: Option<Mlp<T>>,
        embed: Mlp<T>,
        noise: Mlp<T>,
    ) -> Result<Self> {
        let io = |m: &Mlp<T>| (m.spec().input_dim(), m.spec().output_dim());
        let want = |s: MlpSpec| (s.input_dim(), s.output_dim());
        let mean_ok = match (&mean, config.mean_spec()) {
            (Some(m), Some(s)) => io(m) == want(s),
            (None, None) => true,
            _ => false,
        };
        if io(&encoder) != want(config.encoder_spec())
            || io(&embed) != want(config.embed_spec())
            || io(&noise) != want(config.noise_spec())
            || !mean_ok
        {
            return Err(Error::InvalidSpec("network shapes do not match the GP config".into()));
        }
        Ok(Self {
            config,
            encoder,
            mean,
            embed,
            noise,
        })
    }

    pub fn config(&self) -> &GpConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Mlp<T> {
        &self.encoder
    }

    pub fn mean_net(&self) -> Option<&Mlp<T>> {
        self.mean.as_ref()
    }

    pub fn mean_net_mut(&mut self) -> Option<&mut Mlp<T>> {
        self.mean.as_mut()
    }

    pub fn embed_net(&self) -> &Mlp<T> {
        &self.embed
    }

    pub fn noise_net(&self) -> &Mlp<T> {
        &self.noise
    }

    pub fn noise_net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.noise
    }

    pub fn with_mean_mode(mut self, mode: MeanMode) -> Result<Self> {
        if mode == self.config.mean_mode {
            return Ok(self);
        }
        match (self.config.mean_mode, mode) {
            (MeanMode::Full, MeanMode::ZeroMean) | (MeanMode::NoSupportMean, MeanMode::ZeroMean) => {
                self.mean = None;
                self.config.mean_mode = mode;
                Ok(self)
            }
            _ => Err(Error::InvalidSpec(format!(
                "cannot switch mean mode {:?} -> {mode:?} without new weights",
                self.config.mean_mode
            ))),
        }
    }

    /// `z = (1/N) Σ f_z([x_n, y_n])`, `1 x K`.
    pub fn encode_task_graph<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        support: &SupportSet<T>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<G::Var> {
        let x = g.constant(support.x.clone())?;
        let y = g.constant(support.y.clone())?;
        let pairs = g.concat_cols(&x, &y)?;
        let zn = self.encoder.forward(g, &pairs, rng)?;
        g.mean_rows(&zn)
    }

    /// Prior mean at each row of `x` (`N x 1`).
    pub fn mean_graph<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        x: &G::Var,
        z: &G::Var,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<G::Var> {
        match (&self.mean, self.config.mean_mode) {
            (Some(net), MeanMode::Full) => {
                let xz = g.concat_cols(x, z)?;
                net.forward(g, &xz, rng)
            }
            (Some(net), MeanMode::NoSupportMean) => net.forward(g, x, rng),
            _ => {
                let rows = g.shape(x).0;
                g.constant(Matrix::zeros(rows, 1))
            }
        }
    }

    /// Kernel embedding `f_k([x, z])` of each row of `x`.
    pub fn embed_graph<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        x: &G::Var,
        z: &G::Var,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<G::Var> {
        let xz = g.concat_cols(x, z)?;
        self.embed.forward(g, &xz, rng)
    }

    /// `f_b(z)`, `1 x 1`.
    pub fn noise_graph<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        z: &G::Var,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<G::Var> {
        self.noise.forward(g, z, rng)
    }

    /// Builds `K`, `m` and `α = K⁻¹(y − m)` for a support set.
    pub fn posterior_graph<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        support: &SupportSet<T>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<PosteriorVars<G::Var>> {
        self.check_input(&support.x)?;
        let z = self.encode_task_graph(g, support, reborrow(&mut rng))?;
        let xs = g.constant(support.x.clone())?;
        let ys = g.constant(support.y.clone())?;
        let support_mean = self.mean_graph(g, &xs, &z, reborrow(&mut rng))?;
        let support_embed = self.embed_graph(g, &xs, &z, reborrow(&mut rng))?;
        let noise = self.noise_graph(g, &z, reborrow(&mut rng))?;
        // noise on the diagonal: one term per observation, so duplicated
        // locations stay distinguishable
        let diag = Matrix::identity(support.len());
        let kernel = kernel_block(g, &support_embed, &support_embed, &noise, Some(diag))?;
        let residual = g.sub(&ys, &support_mean)?;
        let alpha = g.cholesky_solve(&kernel, &residual, self.config.jitter)?;
        Ok(PosteriorVars {
            z,
            support_mean,
            support_embed,
            noise,
            kernel,
            residual,
            alpha,
        })
    }

    /// Predictive mean `m(x) + kᵀα` and variance `k(x,x) − kᵀK⁻¹k` (clamped at 0).
    pub fn predict_from<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        post: &PosteriorVars<G::Var>,
        support_x: &Matrix<T>,
        query_x: &Matrix<T>,
        with_variance: bool,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Prediction<G::Var>> {
        self.check_input(query_x)?;
        let xq = g.constant(query_x.clone())?;
        let query_mean = self.mean_graph(g, &xq, &post.z, reborrow(&mut rng))?;
        let query_embed = self.embed_graph(g, &xq, &post.z, reborrow(&mut rng))?;
        let mask = self
            .config
            .literal_delta
            .then(|| identity_mask(query_x, support_x));
        let cross = kernel_block(g, &query_embed, &post.support_embed, &post.noise, mask)?;
        let correction = g.matmul(&cross, &post.alpha)?;
        let mean = g.add(&query_mean, &correction)?;
        let variance = if with_variance {
            let cross_t = g.transpose(&cross)?;
            let solved = g.cholesky_solve(&post.kernel, &cross_t, self.config.jitter)?;
            let prod = g.mul(&cross_t, &solved)?;
            let quad_row = g.sum_rows(&prod)?;
            let quad = g.transpose(&quad_row)?;
            let one = g.scalar(T::one())?;
            let prior = g.add(&one, &post.noise)?;
            let raw = g.sub(&prior, &quad)?;
            Some(g.clamp_min(&raw, T::zero())?)
        } else {
            None
        };
        Ok(Prediction { mean, variance })
    }

    /// `log N(y | m, K)` on the support set.
    pub fn marginal_graph<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        support: &SupportSet<T>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<G::Var> {
        let post = self.posterior_graph(g, support, rng)?;
        let fit = g.dot(&post.residual, &post.alpha)?;
        let logdet = g.log_det(&post.kernel, self.config.jitter)?;
        let both = g.add(&fit, &logdet)?;
        let half = g.scale(&both, T::lit(-0.5))?;
        let n = support.len() as f64;
        let c = g.scalar(T::lit(0.5 * n * (2.0 * std::f64::consts::PI).ln()))?;
        g.sub(&half, &c)
    }

    pub fn encode_task(&self, support: &SupportSet<T>) -> Result<Matrix<T>> {
        Ok(self.encode_task_graph(&mut Eval, support, None)?.into_matrix())
    }

    /// `m(x; z)` for a single location vector.
    pub fn mean_function(&self, x: &[T], z: &Matrix<T>) -> Result<T> {
        let mut g = Eval;
        let xv = g.constant(Matrix::from_vec(1, x.len(), x.to_vec())?)?;
        let zv = g.constant(z.clone())?;
        Ok(self.mean_graph(&mut g, &xv, &zv, None)?.into_matrix().item())
    }

    /// `k(x, x'; z)`.
    pub fn kernel(&self, x: &[T], x2: &[T], z: &Matrix<T>) -> Result<T> {
        let mut g = Eval;
        let a = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let b = Matrix::from_vec(1, x2.len(), x2.to_vec())?;
        let zv = g.constant(z.clone())?;
        let av = g.constant(a.clone())?;
        let bv = g.constant(b.clone())?;
        let ea = self.embed_graph(&mut g, &av, &zv, None)?;
        let eb = self.embed_graph(&mut g, &bv, &zv, None)?;
        let noise = self.noise_graph(&mut g, &zv, None)?;
        let k = kernel_block(&mut g, &ea, &eb, &noise, Some(identity_mask(&a, &b)))?;
        Ok(k.into_matrix().item())
    }

    /// Kernel embeddings `f_k([x, z])` of each row of `x`.
    pub fn embed(&self, x: &Matrix<T>, z: &Matrix<T>) -> Result<Matrix<T>> {
        let mut g = Eval;
        let xv = g.constant(x.clone())?;
        let zv = g.constant(z.clone())?;
        Ok(self.embed_graph(&mut g, &xv, &zv, None)?.into_matrix())
    }

    /// `f_b(z)`.
    pub fn noise_level(&self, z: &Matrix<T>) -> Result<T> {
        let mut g = Eval;
        let zv = g.constant(z.clone())?;
        Ok(self.noise_graph(&mut g, &zv, None)?.into_matrix().item())
    }

    /// Inference-mode posterior for repeated prediction.
    pub fn fit_posterior(&self, support: &SupportSet<T>) -> Result<GpPosterior<T>> {
        let mut g = Eval;
        let p = self.posterior_graph(&mut g, support, None)?;
        let kernel = p.kernel.into_matrix();
        let chol = Cholesky::factor(&kernel, &self.config.jitter)?;
        Ok(GpPosterior {
            z: p.z.into_matrix(),
            chol,
            kernel,
            alpha: p.alpha.into_matrix(),
            mean: p.support_mean.into_matrix(),
            noise: p.noise.into_matrix().item(),
            support_x: support.x.clone(),
            support_y: support.y.clone(),
            embeddings: p.support_embed.into_matrix(),
        })
    }

    /// Predictive distributions for each row of `query_x`.
    pub fn predict_posterior(
        &self,
        post: &GpPosterior<T>,
        query_x: &Matrix<T>,
    ) -> Result<Vec<PredictiveDistribution<T>>> {
        let mut g = Eval;
        let vars = PosteriorVars {
            z: g.constant(post.z.clone())?,
            support_mean: g.constant(post.mean.clone())?,
            support_embed: g.constant(post.embeddings.clone())?,
            noise: g.constant(Matrix::scalar(post.noise))?,
            kernel: g.constant(post.kernel.clone())?,
            residual: g.constant(post.support_y.zip_map(&post.mean, |y, m| y - m))?,
            alpha: g.constant(post.alpha.clone())?,
        };
        let pred = self.predict_from(&mut g, &vars, &post.support_x, query_x, true, None)?;
        let mean = pred.mean.into_matrix();
        let var = pred.variance.expect("requested").into_matrix();
        Ok(mean
            .as_slice()
            .iter()
            .zip(var.as_slice())
            .map(|(&mean, &variance)| PredictiveDistribution { mean, variance })
            .collect())
    }

    pub fn marginal_log_likelihood_value(&self, support: &SupportSet<T>) -> Result<T> {
        Ok(self.marginal_graph(&mut Eval, support, None)?.into_matrix().item())
    }

    pub fn cast<U: Scalar>(&self) -> GpModel<U> {
        GpModel {
            config: self.config.clone(),
            encoder: self.encoder.cast(),
            mean: self.mean.as_ref().map(Mlp::cast),
            embed: self.embed.cast(),
            noise: self.noise.cast(),
        }
    }
}

impl<T: Scalar> EpisodicModel<T> for GpModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Gp
    }

    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn has_variance(&self) -> bool {
        true
    }

    fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut out = self.encoder.tensors();
        if let Some(m) = &self.mean {
            out.extend(m.tensors());
        }
        out.extend(self.embed.tensors());
        out.extend(self.noise.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = self.encoder.tensors_mut();
        if let Some(m) = &mut self.mean {
            out.extend(m.tensors_mut());
        }
        out.extend(self.embed.tensors_mut());
        out.extend(self.noise.tensors_mut());
        out
    }

    fn predict<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        support: &SupportSet<T>,
        query_x: &Matrix<T>,
        with_variance: bool,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Prediction<G::Var>> {
        let post = self.posterior_graph(g, support, reborrow(&mut rng))?;
        self.predict_from(g, &post, &support.x, query_x, with_variance, rng)
    }

    fn marginal_log_likelihood<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        support: &SupportSet<T>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<G::Var> {
        self.marginal_graph(g, support, rng)
    }
}
