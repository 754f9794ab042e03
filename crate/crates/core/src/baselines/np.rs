use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::{reborrow, EpisodicModel, ModelKind, Prediction, SupportSet};
use crate::nn::{Mlp, MlpSpec, POSITIVE_FLOOR};
use crate::scalar::Scalar;

/// Conditional neural process: mean-pooled encoder plus a decoder on `[x, z]`.
///
/// With `variance_head` the decoder has a second output mapped through
/// `softplus + 1e-6` to a predictive variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NpModel<T> {
    input_dim: usize,
    encoder: Mlp<T>,
    decoder: Mlp<T>,
    variance_head: bool,
}

impl<T: Scalar> NpModel<T> {
    pub fn new(
        input_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        dropout: f64,
        variance_head: bool,
        seed: u64,
    ) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::init_with(
            MlpSpec::new(input_dim + 1, hidden, latent_dim).with_dropout(dropout),
            &mut rng,
        )?;
        let out = if variance_head { 2 } else { 1 };
        let decoder = Mlp::init_with(
            MlpSpec::new(input_dim + latent_dim, hidden, out).with_dropout(dropout),
            &mut rng,
        )?;
        Ok(Self {
            input_dim,
            encoder,
            decoder,
            variance_head,
        })
    }

    pub fn encoder(&self) -> &Mlp<T> {
        &self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut Mlp<T> {
        &mut self.decoder
    }
}

impl<T: Scalar> EpisodicModel<T> for NpModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Np
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn has_variance(&self) -> bool {
        self.variance_head
    }

    fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }

    fn predict<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        support: &SupportSet<T>,
        query_x: &Matrix<T>,
        with_variance: bool,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Prediction<G::Var>> {
        self.check_input(&support.x)?;
        self.check_input(query_x)?;
        let xs = g.constant(support.x.clone())?;
        let ys = g.constant(support.y.clone())?;
        let pairs = g.concat_cols(&xs, &ys)?;
        let zn = self.encoder.forward(g, &pairs, reborrow(&mut rng))?;
        let z = g.mean_rows(&zn)?;
        let xq = g.constant(query_x.clone())?;
        let xz = g.concat_cols(&xq, &z)?;
        let out = self.decoder.forward(g, &xz, rng)?;
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
}
