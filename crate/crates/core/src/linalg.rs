//! Small dense linear algebra: a row-major matrix, Cholesky factorization and
//! a column-pivoted rank test. Used by the dense oracles and by the `p x p`
//! systems of the trend extension.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::numeric::{from_usize, lit, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
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

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// Removes row and column `k` of a square matrix.
    pub fn delete_row_col(&self, k: usize) -> Self {
        let keep = |i: usize| if i < k { i } else { i + 1 };
        Self::from_fn(self.rows - 1, self.cols - 1, |i, j| self[(keep(i), keep(j))])
    }

    pub fn delete_row(&self, k: usize) -> Self {
        let keep = |i: usize| if i < k { i } else { i + 1 };
        Self::from_fn(self.rows - 1, self.cols, |i, j| self[(keep(i), j)])
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
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

/// Lower-triangular Cholesky factor `L` with `A = L L'`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factorizes a symmetric positive-definite matrix.
    ///
    /// Fails when a pivot is nonpositive or when the squared pivots span more
    /// than `1 / (1e4 * n * eps)`, which flags near-singular inputs whose
    /// factor would be numerically meaningless.
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        let n = a.rows();
        if n != a.cols() {
            return Err(Error::InvalidParameter(format!(
                "cholesky needs a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let mut l = Matrix::zeros(n, n);
        let mut min_pivot = T::infinity();
        let mut max_pivot = T::zero();
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::Conditioning(format!(
                    "nonpositive pivot {} at column {}",
                    d,
                    j + 1
                )));
            }
            min_pivot = min_pivot.min(d);
            max_pivot = max_pivot.max(d);
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        let floor = lit::<T>(1e4) * from_usize::<T>(n.max(1)) * T::epsilon();
        if n > 1 && min_pivot < floor * max_pivot {
            return Err(Error::Conditioning(format!(
                "pivot ratio {} below {}",
                min_pivot / max_pivot,
                floor
            )));
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    pub fn log_det(&self) -> T {
        let two = lit::<T>(2.0);
        (0..self.lower.rows())
            .map(|i| two * self.lower[(i, i)].ln())
            .sum()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lower.rows();
        assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s = s - l[(i, k)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s = s - l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    pub fn solve_matrix(&self, b: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let col = self.solve(&b.column(j));
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix<T> {
        self.solve_matrix(&Matrix::identity(self.lower.rows()))
    }
}

/// Numerical rank of `a` by Householder-free modified Gram–Schmidt with column
/// pivoting; a column counts when its residual norm exceeds `rel_tol * ||a||_F`.
pub fn pivoted_rank<T: Scalar>(a: &Matrix<T>, rel_tol: T) -> usize {
    let (m, p) = (a.rows(), a.cols());
    let threshold = rel_tol * a.frobenius_norm();
    let mut cols: Vec<Vec<T>> = (0..p).map(|j| a.column(j)).collect();
    let mut rank = 0;
    for step in 0..p.min(m) {
        let (best, norm) = (step..p)
            .map(|j| (j, cols[j].iter().map(|&x| x * x).sum::<T>().sqrt()))
            .fold((step, -T::one()), |acc, c| if c.1 > acc.1 { c } else { acc });
        if !(norm > threshold) {
            break;
        }
        cols.swap(step, best);
        let q: Vec<T> = cols[step].iter().map(|&x| x / norm).collect();
        for col in cols.iter_mut().skip(step + 1) {
            let proj: T = col.iter().zip(&q).map(|(&c, &qq)| c * qq).sum();
            for (c, &qq) in col.iter_mut().zip(&q) {
                *c = *c - proj * qq;
            }
        }
        rank += 1;
    }
    rank
}
