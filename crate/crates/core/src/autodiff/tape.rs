use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Scalar;

use super::graph::{check_finite, Graph};
use super::ops::{backward, forward, Op};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Matrix<T>>,
    op: Op<T>,
    parents: Vec<usize>,
    factor: Option<Cholesky<T>>,
}

/// Recording graph. Nodes are appended in creation order, so parents always
/// precede children and a reverse sweep is a valid reverse topological order.
pub struct Tape<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
    params: HashMap<*const Matrix<T>, usize>,
}

impl<'p, T: Scalar> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Matrix<T>>, op: Op<T>, parents: Vec<usize>, factor: Option<Cholesky<T>>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            parents,
            factor,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a 1x1 output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let (rows, cols) = self.nodes[output.0].value.shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NotScalar { rows, cols });
        }
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::scalar(T::one()));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.parents.is_empty() {
                let inputs: Vec<&Matrix<T>> =
                    node.parents.iter().map(|&p| &*self.nodes[p].value).collect();
                let pgrads = backward(&node.op, &inputs, &node.value, node.factor.as_ref(), &g)?;
                for (&p, pg) in node.parents.iter().zip(pgrads) {
                    debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            params: self.params.clone(),
        })
    }
}

impl<'p, T: Scalar> Graph<'p, T> for Tape<'p, T> {
    type Var = Var;

    fn constant(&mut self, value: Matrix<T>) -> Result<Var> {
        check_finite(&value, "constant")?;
        Ok(self.push(Cow::Owned(value), Op::Leaf, vec![], None))
    }

    fn param(&mut self, value: &'p Matrix<T>) -> Var {
        let key = value as *const Matrix<T>;
        if let Some(&i) = self.params.get(&key) {
            return Var(i);
        }
        let v = self.push(Cow::Borrowed(value), Op::Leaf, vec![], None);
        self.params.insert(key, v.0);
        v
    }

    fn value<'a>(&'a self, var: &'a Var) -> &'a Matrix<T> {
        &self.nodes[var.0].value
    }

    fn apply(&mut self, op: Op<T>, inputs: &[&Var]) -> Result<Var> {
        let vals: Vec<&Matrix<T>> = inputs.iter().map(|v| &*self.nodes[v.0].value).collect();
        let out = forward(&op, &vals)?;
        let parents = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(Cow::Owned(out.value), op, parents, out.factor))
    }

    fn is_recording(&self) -> bool {
        true
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Matrix<T>>>,
    shapes: Vec<(usize, usize)>,
    params: HashMap<*const Matrix<T>, usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to any node; zeros if the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Matrix<T> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Gradient with respect to a parameter tensor bound with [`Graph::param`].
    /// Zeros (shaped like `param`) when it was never bound or is unused.
    pub fn param(&self, param: &Matrix<T>) -> Matrix<T> {
        match self.params.get(&(param as *const Matrix<T>)) {
            Some(&i) => self.wrt(Var(i)),
            None => Matrix::zeros(param.rows(), param.cols()),
        }
    }

    /// Gradients for a list of parameter tensors, in order.
    pub fn params(&self, tensors: &[&Matrix<T>]) -> Vec<Matrix<T>> {
        tensors.iter().map(|p| self.param(p)).collect()
    }
}
