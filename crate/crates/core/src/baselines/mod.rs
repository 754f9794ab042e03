//! Comparison methods sharing the [`EpisodicModel`] interface, and
//! [`AnyModel`] for dispatching over every kind at runtime.

mod gpr;
mod nn;
mod np;

pub use gpr::GprModel;
pub use nn::{FineTune, NnModel};
pub use np::NpModel;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::Result;
use crate::gp::GpModel;
use crate::linalg::Matrix;
use crate::model::{EpisodicModel, ModelKind, Prediction, SupportSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "kind", content = "model", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum AnyModel<T> {
    Gp(GpModel<T>),
    Gpr(GprModel<T>),
    Np(NpModel<T>),
    Nn(NnModel<T>),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            AnyModel::Gp($m) => $body,
            AnyModel::Gpr($m) => $body,
            AnyModel::Np($m) => $body,
            AnyModel::Nn($m) => $body,
        }
    };
}

impl<T: Scalar> EpisodicModel<T> for AnyModel<T> {
    fn kind(&self) -> ModelKind {
        dispatch!(self, m => m.kind())
    }

    fn input_dim(&self) -> usize {
        dispatch!(self, m => m.input_dim())
    }

    fn has_variance(&self) -> bool {
        dispatch!(self, m => m.has_variance())
    }

    fn tensors(&self) -> Vec<&Matrix<T>> {
        dispatch!(self, m => m.tensors())
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        dispatch!(self, m => m.tensors_mut())
    }

    fn predict<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        support: &SupportSet<T>,
        query_x: &Matrix<T>,
        with_variance: bool,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Prediction<G::Var>> {
        dispatch!(self, m => m.predict(g, support, query_x, with_variance, rng))
    }

    fn marginal_log_likelihood<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        support: &SupportSet<T>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<G::Var> {
        dispatch!(self, m => m.marginal_log_likelihood(g, support, rng))
    }

    fn adapt(&self, support: &SupportSet<T>) -> Result<Option<Self>> {
        Ok(match self {
            AnyModel::Nn(m) => m.adapt(support)?.map(AnyModel::Nn),
            _ => None,
        })
    }
}
