use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tape};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::{mse, EpisodicModel, ModelKind, Prediction, SupportSet};
use crate::nn::{AdamConfig, AdamState, Mlp, MlpSpec, POSITIVE_FLOOR};
use crate::scalar::Scalar;

/// Support-set fine-tuning schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTune {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for FineTune {
    fn default() -> Self {
        Self { epochs: 100, lr: 1e-3 }
    }
}

/// Plain regressor from location to value that ignores the support set at
/// prediction time. With `fine_tune` set it becomes the fine-tuning
/// baseline: [`adapt`](EpisodicModel::adapt) returns a copy trained on the
/// support set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NnModel<T> {
    net: Mlp<T>,
    variance_head: bool,
    pub fine_tune: Option<FineTune>,
}

impl<T: Scalar> NnModel<T> {
    pub fn new(input_dim: usize, hidden: &[usize], dropout: f64, variance_head: bool, seed: u64) -> Result<Self> {
        let out = if variance_head { 2 } else { 1 };
        let net = Mlp::init(MlpSpec::new(input_dim, hidden, out).with_dropout(dropout), seed)?;
        Ok(Self {
            net,
            variance_head,
            fine_tune: None,
        })
    }

    pub fn with_fine_tune(mut self, schedule: FineTune) -> Self {
        self.fine_tune = Some(schedule);
        self
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.net
    }

    fn mean_only<'p, G: Graph<'p, T>>(&'p self, g: &mut G, x: &Matrix<T>) -> Result<G::Var> {
        let xv = g.constant(x.clone())?;
        let out = self.net.forward(g, &xv, None)?;
        if self.variance_head {
            g.select_col(&out, 0)
        } else {
            Ok(out)
        }
    }

    /// Copy fitted to the support set by full-batch Adam on the mean's
    /// squared error, dropout off.
    pub fn fine_tuned(&self, support: &SupportSet<T>, schedule: FineTune) -> Result<Self> {
        self.check_input(&support.x)?;
        let mut model = self.clone();
        let config = AdamConfig {
            lr: schedule.lr,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(config, &model.tensors());
        for _ in 0..schedule.epochs {
            let grads = {
                let mut tape = Tape::new();
                let mean = model.mean_only(&mut tape, &support.x)?;
                let y = tape.constant(support.y.clone())?;
                let loss = mse(&mut tape, &mean, &y)?;
                tape.backward(loss)?.params(&model.tensors())
            };
            adam.step(&mut model.tensors_mut(), &grads)?;
        }
        Ok(model)
    }
}

impl<T: Scalar> EpisodicModel<T> for NnModel<T> {
    fn kind(&self) -> ModelKind {
        if self.fine_tune.is_some() {
            ModelKind::Ft
        } else {
            ModelKind::Nn
        }
    }

    fn input_dim(&self) -> usize {
        self.net.spec().input_dim()
    }

    fn has_variance(&self) -> bool {
        self.variance_head
    }

    fn tensors(&self) -> Vec<&Matrix<T>> {
        self.net.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.net.tensors_mut()
    }

    fn predict<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        _support: &SupportSet<T>,
        query_x: &Matrix<T>,
        with_variance: bool,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Prediction<G::Var>> {
        self.check_input(query_x)?;
        let xq = g.constant(query_x.clone())?;
        let out = self.net.forward(g, &xq, rng)?;
        if !self.variance_head {
            return Ok(Prediction {
                mean: out,
                variance: None,
            });
        }
        let mean = g.select_col(&out, 0)?;
        let variance = if with_variance {
            let raw = g.select_col(&out, 1)?;
            let sp = g.softplus(&raw)?;
            let floor = g.scalar(T::lit(POSITIVE_FLOOR))?;
            Some(g.add(&sp, &floor)?)
        } else {
            None
        };
        Ok(Prediction { mean, variance })
    }

    fn adapt(&self, support: &SupportSet<T>) -> Result<Option<Self>> {
        match self.fine_tune {
            Some(schedule) => self.fine_tuned(support, schedule).map(Some),
            None => Ok(None),
        }
    }
}
