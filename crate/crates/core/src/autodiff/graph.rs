use std::borrow::Cow;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::linalg::{JitterPolicy, Matrix};
use crate::scalar::Scalar;

use super::ops::{forward, Op};

/// Something that evaluates primitives: either a recording [`Tape`](super::Tape)
/// or the tape-free [`Eval`] used for inference.
///
/// Model code is written once against this trait. `'p` is the lifetime of the
/// parameter tensors borrowed for the duration of a pass.
pub trait Graph<'p, T: Scalar> {
    type Var: Clone;

    /// A non-trainable input.
    fn constant(&mut self, value: Matrix<T>) -> Result<Self::Var>;

    /// A trainable tensor. Binding the same tensor twice yields one leaf.
    fn param(&mut self, value: &'p Matrix<T>) -> Self::Var;

    fn value<'a>(&'a self, var: &'a Self::Var) -> &'a Matrix<T>;

    /// Evaluates `op` on `inputs` (and records it, when recording).
    fn apply(&mut self, op: Op<T>, inputs: &[&Self::Var]) -> Result<Self::Var>;

    fn is_recording(&self) -> bool;

    fn shape(&self, var: &Self::Var) -> (usize, usize) {
        self.value(var).shape()
    }

    fn scalar(&mut self, v: T) -> Result<Self::Var> {
        self.constant(Matrix::scalar(v))
    }

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::MatMul, &[a, b])
    }
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Add, &[a, b])
    }
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Sub, &[a, b])
    }
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Mul, &[a, b])
    }
    fn div(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Div, &[a, b])
    }
    fn neg(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Neg, &[a])
    }
    fn scale(&mut self, a: &Self::Var, s: T) -> Result<Self::Var> {
        self.apply(Op::Scale(s), &[a])
    }
    fn relu(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Relu, &[a])
    }
    fn exp(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Exp, &[a])
    }
    fn log(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Log, &[a])
    }
    fn softplus(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Softplus, &[a])
    }
    fn clamp_min(&mut self, a: &Self::Var, floor: T) -> Result<Self::Var> {
        self.apply(Op::ClampMin(floor), &[a])
    }
    fn sum(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Sum, &[a])
    }
    fn mean(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Mean, &[a])
    }
    fn sum_rows(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::SumRows, &[a])
    }
    fn mean_rows(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::MeanRows, &[a])
    }
    fn transpose(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Transpose, &[a])
    }
    fn concat_cols(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::ConcatCols, &[a, b])
    }
    fn select_col(&mut self, a: &Self::Var, col: usize) -> Result<Self::Var> {
        self.apply(Op::SelectCol(col), &[a])
    }
    fn sqdist(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::SqDist, &[a, b])
    }
    fn dot(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Dot, &[a, b])
    }
    fn cholesky_solve(
        &mut self,
        a: &Self::Var,
        b: &Self::Var,
        jitter: JitterPolicy,
    ) -> Result<Self::Var> {
        self.apply(Op::CholSolve(jitter), &[a, b])
    }
    fn log_det(&mut self, a: &Self::Var, jitter: JitterPolicy) -> Result<Self::Var> {
        self.apply(Op::LogDet(jitter), &[a])
    }
}

pub(crate) fn check_finite<T: Scalar>(m: &Matrix<T>, op: &'static str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Inference-mode evaluator: computes values only, nothing is retained
/// beyond the handles the caller still holds.
#[derive(Debug, Default)]
pub struct Eval;

impl Eval {
    pub fn new() -> Self {
        Eval
    }
}

/// Value handle for [`Eval`]; parameters are borrowed, not copied.
#[derive(Clone, Debug)]
pub struct EvalVar<'p, T: Scalar>(Rc<Cow<'p, Matrix<T>>>);

impl<'p, T: Scalar> EvalVar<'p, T> {
    pub fn into_matrix(self) -> Matrix<T> {
        match Rc::try_unwrap(self.0) {
            Ok(cow) => cow.into_owned(),
            Err(rc) => (**rc).clone(),
        }
    }
}

impl<'p, T: Scalar> Graph<'p, T> for Eval {
    type Var = EvalVar<'p, T>;

    fn constant(&mut self, value: Matrix<T>) -> Result<Self::Var> {
        check_finite(&value, "constant")?;
        Ok(EvalVar(Rc::new(Cow::Owned(value))))
    }

    fn param(&mut self, value: &'p Matrix<T>) -> Self::Var {
        EvalVar(Rc::new(Cow::Borrowed(value)))
    }

    fn value<'a>(&'a self, var: &'a Self::Var) -> &'a Matrix<T> {
        &var.0
    }

    fn apply(&mut self, op: Op<T>, inputs: &[&Self::Var]) -> Result<Self::Var> {
        let vals: Vec<&Matrix<T>> = inputs.iter().map(|v| &**v.0).collect();
        let out = forward(&op, &vals)?;
        Ok(EvalVar(Rc::new(Cow::Owned(out.value))))
    }

    fn is_recording(&self) -> bool {
        false
    }
}
