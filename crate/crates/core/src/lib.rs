//! Few-shot spatial regression with a task-conditioned Gaussian process.
//!
//! A support set of a handful of (location, value) pairs is encoded into a
//! task representation; neural mean and kernel functions conditioned on that
//! representation define a GP whose posterior predicts the rest of the region.
//! The networks are meta-trained episodically over many related tasks.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod datasets;
pub mod eval;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::{Cholesky, JitterPolicy, Matrix};
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
