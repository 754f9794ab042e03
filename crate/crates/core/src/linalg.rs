//! Dense row-major matrices and the Cholesky machinery behind every GP solve.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn scalar(value: T) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                lhs: (rows, cols),
                rhs: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Column vector.
    pub fn column(data: Vec<T>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    lhs: (rows.len(), cols),
                    rhs: (1, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Single entry of a 1x1 matrix (or the first entry otherwise).
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let brow = &rhs.data[p * m..(p + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: out,
        })
    }

    /// `self * rhsᵀ`.
    pub fn matmul_nt(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(Error::Shape {
                op: "matmul_nt",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (n, m) = (self.rows, rhs.rows);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let a = self.row(i);
            for j in 0..m {
                let b = rhs.row(j);
                out.push(a.iter().zip(b).map(|(&x, &y)| x * y).sum());
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: out,
        })
    }

    /// `selfᵀ * rhs`.
    pub fn matmul_tn(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(Error::Shape {
                op: "matmul_tn",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (k, n, m) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![T::zero(); n * m];
        for p in 0..k {
            let arow = self.row(p);
            let brow = rhs.row(p);
            for (i, &a) in arow.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: out,
        })
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Diagonal jitter schedule for Cholesky factorization.
///
/// The first attempt factors the matrix as given. On failure, `initial` is
/// added to the diagonal and multiplied by `growth` after each further failure
/// until it would exceed `max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterPolicy {
    pub initial: f64,
    pub max: f64,
    pub growth: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            initial: 1e-10,
            max: 1e-6,
            growth: 10.0,
        }
    }
}

impl JitterPolicy {
    /// Plain factorization, no retries.
    pub fn none() -> Self {
        Self {
            initial: 0.0,
            max: 0.0,
            growth: 10.0,
        }
    }

    fn schedule(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut j = self.initial;
        while j > 0.0 && j <= self.max * (1.0 + 1e-9) {
            out.push(j);
            j *= self.growth;
        }
        out
    }
}

/// Lower-triangular Cholesky factor `L` with `A + jitter·I = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Matrix<T>,
    jitter: T,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors `a` with the given jitter added to the diagonal. The error
    /// carries the 1-based index of the first non-positive leading minor.
    pub fn factor_with(a: &Matrix<T>, jitter: T) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::Shape {
                op: "cholesky",
                lhs: a.shape(),
                rhs: a.shape(),
            });
        }
        let n = a.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)] + jitter;
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= T::zero() || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    minor: j + 1,
                    jitter: jitter.as_f64(),
                });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l, jitter })
    }

    pub fn factor(a: &Matrix<T>, policy: &JitterPolicy) -> Result<Self> {
        let mut last = None;
        for j in policy.schedule() {
            match Self::factor_with(a, T::lit(j)) {
                Ok(c) => return Ok(c),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("schedule is never empty"))
    }

    pub fn l(&self) -> &Matrix<T> {
        &self.l
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    /// Solves `L Y = B` in place.
    fn forward_sub(&self, b: &mut Matrix<T>) {
        let n = self.dim();
        let m = b.cols;
        for i in 0..n {
            for k in 0..i {
                let lik = self.l[(i, k)];
                if lik == T::zero() {
                    continue;
                }
                for c in 0..m {
                    let v = b[(k, c)];
                    b[(i, c)] -= lik * v;
                }
            }
            let d = self.l[(i, i)];
            for c in 0..m {
                b[(i, c)] /= d;
            }
        }
    }

    /// Solves `Lᵀ X = Y` in place.
    fn backward_sub(&self, b: &mut Matrix<T>) {
        let n = self.dim();
        let m = b.cols;
        for i in (0..n).rev() {
            for k in i + 1..n {
                let lki = self.l[(k, i)];
                if lki == T::zero() {
                    continue;
                }
                for c in 0..m {
                    let v = b[(k, c)];
                    b[(i, c)] -= lki * v;
                }
            }
            let d = self.l[(i, i)];
            for c in 0..m {
                b[(i, c)] /= d;
            }
        }
    }

    /// `L⁻¹ B`.
    pub fn solve_lower(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_rhs(b)?;
        let mut x = b.clone();
        self.forward_sub(&mut x);
        Ok(x)
    }

    /// `A⁻¹ B`.
    pub fn solve(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_rhs(b)?;
        let mut x = b.clone();
        self.forward_sub(&mut x);
        self.backward_sub(&mut x);
        Ok(x)
    }

    pub fn inverse(&self) -> Matrix<T> {
        self.solve(&Matrix::identity(self.dim()))
            .expect("identity has matching rows")
    }

    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<T>() * two
    }

    fn check_rhs(&self, b: &Matrix<T>) -> Result<()> {
        if b.rows != self.dim() {
            return Err(Error::Shape {
                op: "cholesky_solve",
                lhs: self.l.shape(),
                rhs: b.shape(),
            });
        }
        Ok(())
    }
}
