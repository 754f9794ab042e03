use crate::error::{Error, Result};
use crate::linalg::{Cholesky, JitterPolicy, Matrix};
use crate::scalar::Scalar;

/// Differentiable primitives.
///
/// Elementwise binary ops broadcast either operand along any axis of
/// length one (scalars, row vectors, column vectors).
#[derive(Clone, Debug)]
pub enum Op<T> {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(T),
    Relu,
    Exp,
    Log,
    Softplus,
    /// `max(x, floor)`; gradient is zero where the floor is active.
    ClampMin(T),
    /// Sum of all entries, 1x1.
    Sum,
    /// Mean of all entries, 1x1.
    Mean,
    /// Column sums, r x c -> 1 x c.
    SumRows,
    /// Column means, r x c -> 1 x c.
    MeanRows,
    Transpose,
    /// `[a, b]` side by side; a single-row `b` is repeated for every row of `a`.
    ConcatCols,
    SelectCol(usize),
    /// Pairwise squared Euclidean distances between the rows of two matrices.
    SqDist,
    /// Sum of elementwise products of two equally shaped matrices, 1x1.
    Dot,
    /// `A⁻¹ B` for symmetric positive-definite `A`.
    CholSolve(JitterPolicy),
    /// `log det A` for symmetric positive-definite `A`.
    LogDet(JitterPolicy),
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "subtract",
            Op::Mul => "multiply",
            Op::Div => "divide",
            Op::Neg => "negate",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Softplus => "softplus",
            Op::ClampMin(_) => "clamp_min",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumRows => "sum_rows",
            Op::MeanRows => "mean_rows",
            Op::Transpose => "transpose",
            Op::ConcatCols => "concat_cols",
            Op::SelectCol(_) => "select_col",
            Op::SqDist => "sqdist",
            Op::Dot => "dot",
            Op::CholSolve(_) => "cholesky_solve",
            Op::LogDet(_) => "log_det",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Op::Leaf => 0,
            Op::MatMul
            | Op::Add
            | Op::Sub
            | Op::Mul
            | Op::Div
            | Op::ConcatCols
            | Op::SqDist
            | Op::Dot
            | Op::CholSolve(_) => 2,
            _ => 1,
        }
    }
}

/// Result of evaluating a primitive. Factorizing primitives keep their
/// Cholesky factor for the adjoint.
pub(crate) struct Output<T> {
    pub value: Matrix<T>,
    pub factor: Option<Cholesky<T>>,
}

fn shape_err<T: Scalar>(op: &Op<T>, a: &Matrix<T>, b: &Matrix<T>) -> Error {
    Error::Shape {
        op: op.name(),
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn broadcast_shape<T: Scalar>(op: &Op<T>, a: &Matrix<T>, b: &Matrix<T>) -> Result<(usize, usize)> {
    match (
        broadcast_dim(a.rows(), b.rows()),
        broadcast_dim(a.cols(), b.cols()),
    ) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(shape_err(op, a, b)),
    }
}

#[inline]
fn bget<T: Scalar>(m: &Matrix<T>, i: usize, j: usize) -> T {
    let i = if m.rows() == 1 { 0 } else { i };
    let j = if m.cols() == 1 { 0 } else { j };
    m[(i, j)]
}

fn elementwise<T: Scalar>(
    op: &Op<T>,
    a: &Matrix<T>,
    b: &Matrix<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Matrix<T>> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    let (r, c) = broadcast_shape(op, a, b)?;
    Ok(Matrix::from_fn(r, c, |i, j| f(bget(a, i, j), bget(b, i, j))))
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to<T: Scalar>(g: Matrix<T>, shape: (usize, usize)) -> Matrix<T> {
    if g.shape() == shape {
        return g;
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let oi = if shape.0 == 1 { 0 } else { i };
            let oj = if shape.1 == 1 { 0 } else { j };
            out[(oi, oj)] += g[(i, j)];
        }
    }
    out
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn square<T: Scalar>(op: &Op<T>, a: &Matrix<T>) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(shape_err(op, a, a));
    }
    Ok(())
}

pub(crate) fn forward<T: Scalar>(op: &Op<T>, inputs: &[&Matrix<T>]) -> Result<Output<T>> {
    debug_assert_eq!(inputs.len(), op.arity());
    let mut factor = None;
    let value = match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.cols() != b.rows() {
                return Err(shape_err(op, a, b));
            }
            a.matmul(b)?
        }
        Op::Add => elementwise(op, inputs[0], inputs[1], |x, y| x + y)?,
        Op::Sub => elementwise(op, inputs[0], inputs[1], |x, y| x - y)?,
        Op::Mul => elementwise(op, inputs[0], inputs[1], |x, y| x * y)?,
        Op::Div => elementwise(op, inputs[0], inputs[1], |x, y| x / y)?,
        Op::Neg => inputs[0].map(|x| -x),
        Op::Scale(s) => inputs[0].scale(*s),
        Op::Relu => inputs[0].map(|x| x.max(T::zero())),
        Op::Exp => inputs[0].map(T::exp),
        Op::Log => inputs[0].map(T::ln),
        Op::Softplus => inputs[0].map(softplus),
        Op::ClampMin(f) => inputs[0].map(|x| x.max(*f)),
        Op::Sum => Matrix::scalar(inputs[0].sum()),
        Op::Mean => {
            let a = inputs[0];
            Matrix::scalar(a.sum() / T::lit(a.len() as f64))
        }
        Op::SumRows | Op::MeanRows => {
            let a = inputs[0];
            let mut out = Matrix::zeros(1, a.cols());
            for i in 0..a.rows() {
                for (o, &v) in out.as_mut_slice().iter_mut().zip(a.row(i)) {
                    *o += v;
                }
            }
            if matches!(op, Op::MeanRows) {
                let n = T::lit(a.rows() as f64);
                out = out.map(|v| v / n);
            }
            out
        }
        Op::Transpose => inputs[0].transpose(),
        Op::ConcatCols => {
            let (a, b) = (inputs[0], inputs[1]);
            if b.rows() != a.rows() && b.rows() != 1 {
                return Err(shape_err(op, a, b));
            }
            let (ca, cb) = (a.cols(), b.cols());
            Matrix::from_fn(a.rows(), ca + cb, |i, j| {
                if j < ca {
                    a[(i, j)]
                } else {
                    bget(b, i, j - ca)
                }
            })
        }
        Op::SelectCol(c) => {
            let a = inputs[0];
            if *c >= a.cols() {
                return Err(shape_err(op, a, a));
            }
            Matrix::from_fn(a.rows(), 1, |i, _| a[(i, *c)])
        }
        Op::SqDist => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.cols() != b.cols() {
                return Err(shape_err(op, a, b));
            }
            Matrix::from_fn(a.rows(), b.rows(), |i, j| {
                a.row(i)
                    .iter()
                    .zip(b.row(j))
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum()
            })
        }
        Op::Dot => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(shape_err(op, a, b));
            }
            Matrix::scalar(
                a.as_slice()
                    .iter()
                    .zip(b.as_slice())
                    .map(|(&x, &y)| x * y)
                    .sum(),
            )
        }
        Op::CholSolve(policy) => {
            let (a, b) = (inputs[0], inputs[1]);
            square(op, a)?;
            if b.rows() != a.rows() {
                return Err(shape_err(op, a, b));
            }
            let c = Cholesky::factor(a, policy)?;
            let x = c.solve(b)?;
            factor = Some(c);
            x
        }
        Op::LogDet(policy) => {
            let a = inputs[0];
            square(op, a)?;
            let c = Cholesky::factor(a, policy)?;
            let v = Matrix::scalar(c.log_det());
            factor = Some(c);
            v
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite { op: op.name() });
    }
    Ok(Output { value, factor })
}

/// Vector-Jacobian products: returns one gradient per input, shaped like it.
pub(crate) fn backward<T: Scalar>(
    op: &Op<T>,
    inputs: &[&Matrix<T>],
    out: &Matrix<T>,
    factor: Option<&Cholesky<T>>,
    g: &Matrix<T>,
) -> Result<Vec<Matrix<T>>> {
    let grads = match op {
        Op::Leaf => vec![],
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            vec![g.matmul_nt(b)?, a.matmul_tn(g)?]
        }
        Op::Add => vec![
            reduce_to(g.clone(), inputs[0].shape()),
            reduce_to(g.clone(), inputs[1].shape()),
        ],
        Op::Sub => vec![
            reduce_to(g.clone(), inputs[0].shape()),
            reduce_to(g.map(|v| -v), inputs[1].shape()),
        ],
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * bget(b, i, j));
            let gb = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * bget(a, i, j));
            vec![reduce_to(ga, a.shape()), reduce_to(gb, b.shape())]
        }
        Op::Div => {
            let (a, b) = (inputs[0], inputs[1]);
            let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] / bget(b, i, j));
            let gb = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                let d = bget(b, i, j);
                -g[(i, j)] * bget(a, i, j) / (d * d)
            });
            vec![reduce_to(ga, a.shape()), reduce_to(gb, b.shape())]
        }
        Op::Neg => vec![g.map(|v| -v)],
        Op::Scale(s) => vec![g.scale(*s)],
        Op::Relu => vec![g.zip_map(inputs[0], |gv, x| if x > T::zero() { gv } else { T::zero() })],
        Op::Exp => vec![g.zip_map(out, |gv, y| gv * y)],
        Op::Log => vec![g.zip_map(inputs[0], |gv, x| gv / x)],
        Op::Softplus => vec![g.zip_map(inputs[0], |gv, x| gv * sigmoid(x))],
        Op::ClampMin(f) => {
            vec![g.zip_map(inputs[0], |gv, x| if x > *f { gv } else { T::zero() })]
        }
        Op::Sum => {
            let a = inputs[0];
            vec![Matrix::filled(a.rows(), a.cols(), g.item())]
        }
        Op::Mean => {
            let a = inputs[0];
            let v = g.item() / T::lit(a.len() as f64);
            vec![Matrix::filled(a.rows(), a.cols(), v)]
        }
        Op::SumRows | Op::MeanRows => {
            let a = inputs[0];
            let scale = if matches!(op, Op::MeanRows) {
                T::one() / T::lit(a.rows() as f64)
            } else {
                T::one()
            };
            vec![Matrix::from_fn(a.rows(), a.cols(), |_, j| g[(0, j)] * scale)]
        }
        Op::Transpose => vec![g.transpose()],
        Op::ConcatCols => {
            let (a, b) = (inputs[0], inputs[1]);
            let ca = a.cols();
            let ga = Matrix::from_fn(a.rows(), ca, |i, j| g[(i, j)]);
            let gb_full = Matrix::from_fn(g.rows(), b.cols(), |i, j| g[(i, ca + j)]);
            vec![ga, reduce_to(gb_full, b.shape())]
        }
        Op::SelectCol(c) => {
            let a = inputs[0];
            let mut ga = Matrix::zeros(a.rows(), a.cols());
            for i in 0..a.rows() {
                ga[(i, *c)] = g[(i, 0)];
            }
            vec![ga]
        }
        Op::SqDist => {
            let (a, b) = (inputs[0], inputs[1]);
            let two = T::lit(2.0);
            let mut ga = Matrix::zeros(a.rows(), a.cols());
            let mut gb = Matrix::zeros(b.rows(), b.cols());
            for i in 0..a.rows() {
                for j in 0..b.rows() {
                    let w = g[(i, j)] * two;
                    if w == T::zero() {
                        continue;
                    }
                    for k in 0..a.cols() {
                        let d = w * (a[(i, k)] - b[(j, k)]);
                        ga[(i, k)] += d;
                        gb[(j, k)] -= d;
                    }
                }
            }
            vec![ga, gb]
        }
        Op::Dot => {
            let s = g.item();
            vec![inputs[1].scale(s), inputs[0].scale(s)]
        }
        Op::CholSolve(_) => {
            // X = A⁻¹B:  grad_B = A⁻¹Ḡ,  grad_A = -sym(grad_B Xᵀ)
            let c = factor.expect("cholesky_solve keeps its factor");
            let gb = c.solve(g)?;
            let outer = gb.matmul_nt(out)?;
            let half = T::lit(0.5);
            let ga = Matrix::from_fn(outer.rows(), outer.cols(), |i, j| {
                -(outer[(i, j)] + outer[(j, i)]) * half
            });
            vec![ga, gb]
        }
        Op::LogDet(_) => {
            let c = factor.expect("log_det keeps its factor");
            vec![c.inverse().scale(g.item())]
        }
    };
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn relu_definition() {
        let x = m(&[vec![-1., 0., 2.]]);
        let y = forward(&Op::Relu, &[&x]).unwrap().value;
        assert_eq!(y.as_slice(), &[0., 0., 2.]);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let x = m(&[vec![0.]]);
        let y = forward(&Op::Relu, &[&x]).unwrap().value;
        let g = backward(&Op::Relu, &[&x], &y, None, &Matrix::scalar(1.0)).unwrap();
        assert_eq!(g[0].item(), 0.0);
    }

    #[test]
    fn sqdist_three_four_five() {
        let x = m(&[vec![0., 0.], vec![3., 4.]]);
        let d = forward(&Op::SqDist, &[&x, &x]).unwrap().value;
        assert_eq!(d.as_slice(), &[0., 25., 25., 0.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 1);
        match forward(&Op::MatMul, &[&a, &b]) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, (2, 3));
                assert_eq!(rhs, (2, 1));
            }
            _ => panic!("expected shape error"),
        }
        let ok = Matrix::<f64>::zeros(3, 1);
        assert_eq!(forward(&Op::MatMul, &[&a, &ok]).unwrap().value.shape(), (2, 1));
    }

    #[test]
    fn broadcast_rules() {
        let a = Matrix::<f64>::filled(3, 2, 1.0);
        let row = m(&[vec![1., 2.]]);
        let s = Matrix::scalar(10.0);
        let y = forward(&Op::Add, &[&a, &row]).unwrap().value;
        assert_eq!(y.row(2), &[2., 3.]);
        let y = forward(&Op::Mul, &[&s, &a]).unwrap().value;
        assert_eq!(y.shape(), (3, 2));
        let bad = Matrix::<f64>::zeros(2, 2);
        assert!(forward(&Op::Add, &[&a, &bad]).is_err());
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let x = m(&[vec![-1.0]]);
        assert!(matches!(
            forward(&Op::Log, &[&x]),
            Err(Error::NonFinite { op: "log" })
        ));
        let big = m(&[vec![1e300]]);
        assert!(forward(&Op::Exp, &[&big]).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        let x = m(&[vec![-800., 0., 800.]]);
        let y = forward(&Op::Softplus, &[&x]).unwrap().value;
        assert!(y[(0, 0)] >= 0.0 && y[(0, 0)] < 1e-300);
        assert!((y[(0, 1)] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(y[(0, 2)], 800.0);
    }
}
