//! The interface every meta-trainable regressor implements, plus the
//! objectives computed on top of it.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Lower bound applied to predictive variances inside the log-likelihood.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Labeled observations of one task. `x` is `N x D`, `y` is `N x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportSet<T> {
    pub x: Matrix<T>,
    pub y: Matrix<T>,
}

impl<T: Scalar> SupportSet<T> {
    pub fn new(x: Matrix<T>, y: Matrix<T>) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Data("support set is empty".into()));
        }
        if y.shape() != (x.rows(), 1) {
            return Err(Error::Shape {
                op: "support_set",
                lhs: x.shape(),
                rhs: y.shape(),
            });
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite { op: "support_set" });
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

/// A support set plus labeled queries from the same task.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeData<T> {
    pub support: SupportSet<T>,
    pub query_x: Matrix<T>,
    pub query_y: Matrix<T>,
}

impl<T: Scalar> EpisodeData<T> {
    pub fn new(support: SupportSet<T>, query_x: Matrix<T>, query_y: Matrix<T>) -> Result<Self> {
        if query_x.rows() == 0 {
            return Err(Error::Data("query set is empty".into()));
        }
        if query_y.shape() != (query_x.rows(), 1) || query_x.cols() != support.x.cols() {
            return Err(Error::Shape {
                op: "episode",
                lhs: query_x.shape(),
                rhs: query_y.shape(),
            });
        }
        Ok(Self {
            support,
            query_x,
            query_y,
        })
    }
}

/// Predictive mean (`N_Q x 1`) and, when the model has one, variance.
#[derive(Clone, Debug)]
pub struct Prediction<V> {
    pub mean: V,
    pub variance: Option<V>,
}

/// Per-query Gaussian predictive distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictiveDistribution<T> {
    pub mean: T,
    pub variance: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    /// Mean squared error on the query set.
    #[serde(rename = "err_obj")]
    ErrObj,
    /// Negative mean predictive log density on the query set.
    #[serde(rename = "like_obj")]
    LikeObj,
    /// Negative marginal log-likelihood of the support set.
    #[serde(rename = "mar_like_obj")]
    MarLikeObj,
}

impl Objective {
    pub fn needs_variance(self) -> bool {
        matches!(self, Objective::LikeObj)
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::ErrObj => "ErrObj",
            Objective::LikeObj => "LikeObj",
            Objective::MarLikeObj => "MarLikeObj",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "errobj" | "mse" => Ok(Objective::ErrObj),
            "likeobj" | "nll" => Ok(Objective::LikeObj),
            "marlikeobj" | "marginal" => Ok(Objective::MarLikeObj),
            _ => Err(Error::Config(format!("unknown objective {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Task-conditioned neural GP.
    Gp,
    Gpr,
    Np,
    Nn,
    Ft,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Gp => "Ours",
            ModelKind::Gpr => "GPR",
            ModelKind::Np => "NP",
            ModelKind::Nn => "NN",
            ModelKind::Ft => "FT",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gp" | "ours" => Ok(ModelKind::Gp),
            "gpr" => Ok(ModelKind::Gpr),
            "np" => Ok(ModelKind::Np),
            "nn" => Ok(ModelKind::Nn),
            "ft" => Ok(ModelKind::Ft),
            _ => Err(Error::Config(format!("unknown model kind {s:?}"))),
        }
    }
}

/// A regressor that adapts to a task from its support set and can be
/// trained episodically.
pub trait EpisodicModel<T: Scalar>: Clone + Send + Sync {
    fn kind(&self) -> ModelKind;

    /// Width of a location vector.
    fn input_dim(&self) -> usize;

    fn has_variance(&self) -> bool;

    /// Trainable tensors in a fixed order.
    fn tensors(&self) -> Vec<&Matrix<T>>;

    /// Same order as [`tensors`](Self::tensors).
    fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>>;

    /// Predictions for `query_x` given the support set. An rng turns on
    /// train-mode dropout.
    fn predict<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        support: &SupportSet<T>,
        query_x: &Matrix<T>,
        with_variance: bool,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Prediction<G::Var>>;

    fn marginal_log_likelihood<'p, G: Graph<'p, T>>(
        &'p self,
        _g: &mut G,
        _support: &SupportSet<T>,
        _rng: Option<&mut dyn RngCore>,
    ) -> Result<G::Var> {
        Err(Error::Unsupported("marginal likelihood"))
    }

    /// Per-task adaptation before prediction (fine-tuning). `None` means the
    /// model adapts purely through its forward pass.
    fn adapt(&self, _support: &SupportSet<T>) -> Result<Option<Self>> {
        Ok(None)
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "model_input",
                lhs: x.shape(),
                rhs: (x.rows(), self.input_dim()),
            });
        }
        Ok(())
    }
}

/// Reborrows an optional rng for one call without pinning the outer borrow.
pub fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

/// `(1/N) Σ (ŷ − y)²`.
pub fn mse<'p, T: Scalar, G: Graph<'p, T>>(g: &mut G, mean: &G::Var, y: &G::Var) -> Result<G::Var> {
    let d = g.sub(mean, y)?;
    let sq = g.mul(&d, &d)?;
    g.mean(&sq)
}

/// `(1/N) Σ [½ log(2πσ²) + (y − ŷ)²/(2σ²)]` with `σ²` floored at [`VARIANCE_FLOOR`].
pub fn gaussian_nll<'p, T: Scalar, G: Graph<'p, T>>(
    g: &mut G,
    mean: &G::Var,
    variance: &G::Var,
    y: &G::Var,
) -> Result<G::Var> {
    let var = g.clamp_min(variance, T::lit(VARIANCE_FLOOR))?;
    let two_pi = g.scalar(T::lit(2.0 * std::f64::consts::PI))?;
    let scaled = g.mul(&var, &two_pi)?;
    let log_term = g.log(&scaled)?;
    let d = g.sub(y, mean)?;
    let sq = g.mul(&d, &d)?;
    let quad = g.div(&sq, &var)?;
    let both = g.add(&log_term, &quad)?;
    let per = g.scale(&both, T::lit(0.5))?;
    g.mean(&per)
}

/// Training loss of one episode under `objective`.
pub fn episode_loss<'p, T, M, G>(
    model: &'p M,
    g: &mut G,
    episode: &EpisodeData<T>,
    objective: Objective,
    rng: Option<&mut dyn RngCore>,
) -> Result<G::Var>
where
    T: Scalar,
    M: EpisodicModel<T>,
    G: Graph<'p, T>,
{
    match objective {
        Objective::MarLikeObj => {
            let ll = model.marginal_log_likelihood(g, &episode.support, rng)?;
            g.neg(&ll)
        }
        Objective::ErrObj | Objective::LikeObj => {
            let pred = model.predict(
                g,
                &episode.support,
                &episode.query_x,
                objective.needs_variance(),
                rng,
            )?;
            let y = g.constant(episode.query_y.clone())?;
            if objective == Objective::ErrObj {
                mse(g, &pred.mean, &y)
            } else {
                let var = pred
                    .variance
                    .ok_or(Error::Unsupported("likelihood objective without a variance head"))?;
                gaussian_nll(g, &pred.mean, &var, &y)
            }
        }
    }
}
