use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Added after softplus so positive outputs never reach zero.
pub const POSITIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTransform {
    Identity,
    /// `softplus(y) + 1e-6`, applied to every output unit.
    Positive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// input, hidden..., output
    pub widths: Vec<usize>,
    pub output: OutputTransform,
    /// Applied after every hidden activation in train mode.
    pub dropout: f64,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self {
            widths,
            output: OutputTransform::Identity,
            dropout: 0.0,
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn positive(mut self) -> Self {
        self.output = OutputTransform::Positive;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::InvalidSpec(format!(
                "need at least one hidden layer, got widths {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "layer widths must be positive, got {:?}",
                self.widths
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidSpec(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Fully connected ReLU network. Weights are `fan_in x fan_out`, biases `1 x fan_out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Mlp<T> {
    spec: MlpSpec,
    weights: Vec<Matrix<T>>,
    biases: Vec<Matrix<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// He-style initialization: `N(0, 2/fan_in)` weights, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        Self::init_with(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn init_with(spec: MlpSpec, rng: &mut dyn RngCore) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in spec.widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .expect("positive std");
            let data = (0..fan_in * fan_out)
                .map(|_| T::lit(normal.sample(rng)))
                .collect();
            weights.push(Matrix::from_vec(fan_in, fan_out, data)?);
            biases.push(Matrix::zeros(1, fan_out));
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    /// All-zero weights and biases.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let weights = spec
            .widths
            .windows(2)
            .map(|p| Matrix::zeros(p[0], p[1]))
            .collect();
        let biases = spec.widths[1..].iter().map(|&w| Matrix::zeros(1, w)).collect();
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    /// Builds a network from explicit layers; shapes are checked against `spec`.
    pub fn from_layers(spec: MlpSpec, weights: Vec<Matrix<T>>, biases: Vec<Matrix<T>>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.widths.len() - 1;
        if weights.len() != expected || biases.len() != expected {
            return Err(Error::InvalidSpec(format!(
                "expected {expected} layers, got {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in spec.widths.windows(2).enumerate() {
            if weights[l].shape() != (pair[0], pair[1]) || biases[l].shape() != (1, pair[1]) {
                return Err(Error::InvalidSpec(format!("layer {l} has the wrong shape")));
            }
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Matrix<T>] {
        &self.biases
    }

    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            spec: self.spec.clone(),
            weights: self.weights.iter().map(Matrix::cast).collect(),
            biases: self.biases.iter().map(Matrix::cast).collect(),
        }
    }

    /// Forward pass over a batch of rows.
    ///
    /// Passing an rng switches on train mode: inverted dropout after each
    /// hidden activation. Without one, dropout is a no-op.
    pub fn forward<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        input: &G::Var,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<G::Var> {
        let (rows, cols) = g.shape(input);
        if cols != self.spec.input_dim() {
            return Err(Error::Shape {
                op: "mlp_forward",
                lhs: (rows, cols),
                rhs: (self.spec.input_dim(), self.spec.widths[1]),
            });
        }
        let last = self.weights.len() - 1;
        let mut h = input.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wv = g.param(w);
            let bv = g.param(b);
            h = g.matmul(&h, &wv)?;
            h = g.add(&h, &bv)?;
            if l < last {
                h = g.relu(&h)?;
                if let Some(r) = rng.as_deref_mut() {
                    if self.spec.dropout > 0.0 {
                        let (hr, hc) = g.shape(&h);
                        let mask = g.constant(dropout_mask(hr, hc, self.spec.dropout, r))?;
                        h = g.mul(&h, &mask)?;
                    }
                }
            }
        }
        if self.spec.output == OutputTransform::Positive {
            h = g.softplus(&h)?;
            let floor = g.scalar(T::lit(POSITIVE_FLOOR))?;
            h = g.add(&h, &floor)?;
        }
        Ok(h)
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<T: Scalar>(rows: usize, cols: usize, p: f64, rng: &mut dyn RngCore) -> Matrix<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < p {
            T::zero()
        } else {
            keep
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Eval;

    fn eval(net: &Mlp<f64>, x: Matrix<f64>, rng: Option<&mut dyn RngCore>) -> Matrix<f64> {
        let mut g = Eval;
        let xv = g.constant(x).unwrap();
        net.forward(&mut g, &xv, rng).unwrap().into_matrix()
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = MlpSpec::new(4, &[8, 8], 2);
        let a = Mlp::<f64>::init(spec.clone(), 11).unwrap();
        let b = Mlp::<f64>::init(spec.clone(), 11).unwrap();
        let c = Mlp::<f64>::init(spec, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn he_variance_on_wide_layer() {
        let net = Mlp::<f64>::init(MlpSpec::new(256, &[256], 1), 3).unwrap();
        let w = net.weights()[0].as_slice();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let target = 2.0 / 256.0;
        assert!((var - target).abs() < 0.2 * target, "var {var}");
        assert!(net.biases().iter().all(|b| b.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_hidden_layers_is_rejected() {
        let spec = MlpSpec {
            widths: vec![3, 1],
            output: OutputTransform::Identity,
            dropout: 0.0,
        };
        assert!(matches!(Mlp::<f64>::init(spec, 0), Err(Error::InvalidSpec(_))));
        assert!(MlpSpec::new(3, &[4], 1).with_dropout(1.0).validate().is_err());
        assert!(MlpSpec::new(3, &[0], 1).validate().is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::<f64>::zeros(MlpSpec::new(3, &[5, 5], 1)).unwrap();
        let y = eval(&net, Matrix::from_fn(4, 3, |i, j| (i + j) as f64 - 2.5), None);
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positive_head_on_zero_network() {
        let net = Mlp::<f64>::zeros(MlpSpec::new(3, &[5, 5], 1).positive()).unwrap();
        let y = eval(&net, Matrix::from_fn(1, 3, |_, j| j as f64), None);
        assert!((y.item() - (2f64.ln() + 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn input_width_mismatch() {
        let net = Mlp::<f64>::zeros(MlpSpec::new(3, &[5], 1)).unwrap();
        let mut g = Eval;
        let x = g.constant(Matrix::zeros(2, 4)).unwrap();
        assert!(matches!(
            net.forward(&mut g, &x, None),
            Err(Error::Shape { op: "mlp_forward", .. })
        ));
    }

    #[test]
    fn dropout_rate_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mask: Matrix<f64> = dropout_mask(100, 100, 0.1, &mut rng);
        let zeros = mask.as_slice().iter().filter(|&&v| v == 0.0).count() as f64 / 1e4;
        assert!((zeros - 0.1).abs() <= 0.01, "{zeros}");
        let kept = mask.as_slice().iter().find(|&&v| v != 0.0).unwrap();
        assert!((kept - 1.0 / 0.9).abs() < 1e-15);
    }

    #[test]
    fn inference_ignores_dropout() {
        let net = Mlp::<f64>::init(MlpSpec::new(2, &[16, 16], 1).with_dropout(0.5), 1).unwrap();
        let x = Matrix::from_fn(3, 2, |i, j| i as f64 * 0.3 - j as f64);
        assert_eq!(eval(&net, x.clone(), None), eval(&net, x, None));
    }

    #[test]
    fn dropout_expectation_matches_inference_for_linear_readout() {
        // One hidden layer and identity output: the output is linear in the
        // dropped activations, so the train-mode mean equals inference.
        let net = Mlp::<f64>::init(MlpSpec::new(2, &[32], 1).with_dropout(0.2), 9).unwrap();
        let x = Matrix::from_rows(&[vec![0.4, -0.7]]).unwrap();
        let clean = eval(&net, x.clone(), None).item();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 20000;
        let samples: Vec<f64> = (0..n)
            .map(|_| eval(&net, x.clone(), Some(&mut rng)).item())
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - clean).abs() < 4.0 * sd / (n as f64).sqrt(), "{mean} vs {clean}");
    }
}
