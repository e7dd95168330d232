//! Small dense linear algebra used by the QP assembly and the interior-point
//! solver. Problems here are control-sized (tens of variables), so everything
//! is row-major `Vec<f64>` storage without blocking.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row vectors; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · y`
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), &mut out);
            }
        }
        out
    }

    /// `xᵀ · self · x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn scaled(mut self, alpha: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= alpha);
        self
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Adds `alpha · u vᵀ`.
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        for (i, &ui) in u.iter().enumerate() {
            let s = alpha * ui;
            if s != 0.0 {
                axpy(s, v, self.row_mut(i));
            }
        }
    }

    /// Sub-matrix with the given row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// LDLᵀ factorization of a symmetric quasi-definite matrix whose leading
/// `n_pos` pivots are expected positive and the remaining ones negative.
///
/// Pivots with the wrong sign or magnitude below `pivot_tol` are replaced by
/// `±delta`; the count of such replacements is kept so the caller can tell a
/// regularized factor from an exact one.
#[derive(Debug, Clone)]
pub struct Ldl {
    n: usize,
    l: Vec<f64>,
    d: Vec<f64>,
    regularized: usize,
}

impl Ldl {
    pub fn factor(a: &Matrix, n_pos: usize, delta: f64, pivot_tol: f64) -> Self {
        let n = a.rows();
        assert_eq!(n, a.cols());
        let mut l = vec![0.0; n * n];
        let mut d = vec![0.0; n];
        let mut regularized = 0;
        // scratch: w[k] = L[j,k] * d[k]
        let mut w = vec![0.0; n];
        for j in 0..n {
            let lj = &l[j * n..j * n + j];
            let mut dj = a[(j, j)];
            for k in 0..j {
                w[k] = lj[k] * d[k];
                dj -= lj[k] * w[k];
            }
            let positive = j < n_pos;
            let bad = if positive {
                dj < pivot_tol
            } else {
                dj > -pivot_tol
            };
            if bad {
                dj = if positive {
                    dj.max(0.0) + delta
                } else {
                    dj.min(0.0) - delta
                };
                regularized += 1;
            }
            d[j] = dj;
            l[j * n + j] = 1.0;
            for i in (j + 1)..n {
                let li = &l[i * n..i * n + j];
                let s = a[(i, j)] - dot(li, &w[..j]);
                l[i * n + j] = s / dj;
            }
        }
        Self {
            n,
            l,
            d,
            regularized,
        }
    }

    pub fn regularized_pivots(&self) -> usize {
        self.regularized
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let s = dot(&self.l[i * n..i * n + i], &x[..i]);
            x[i] -= s;
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let xi = x[i];
            if xi != 0.0 {
                for k in 0..i {
                    x[k] -= self.l[i * n + k] * xi;
                }
            }
        }
        x
    }

    /// Solves `a x = b` using this factor as preconditioner for a few rounds
    /// of iterative refinement against the unperturbed matrix `a`.
    pub fn solve_refined(&self, a: &Matrix, b: &[f64], rounds: usize) -> Vec<f64> {
        let mut x = self.solve(b);
        for _ in 0..rounds {
            let ax = a.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            if norm_inf(&r) <= 1e-15 * (1.0 + norm_inf(b)) {
                break;
            }
            let dx = self.solve(&r);
            axpy(1.0, &dx, &mut x);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ldl_solves_quasi_definite_system() {
        // [[4, 1, 1], [1, 3, 0], [1, 0, 0]] : 2x2 PD block, 1 equality row
        let a = Matrix::from_rows(&[
            vec![4.0, 1.0, 1.0],
            vec![1.0, 3.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ]);
        let f = Ldl::factor(&a, 2, 1e-10, 1e-12);
        assert_eq!(f.regularized_pivots(), 0);
        let b = [1.0, 2.0, 3.0];
        let x = f.solve_refined(&a, &b, 2);
        let ax = a.mul_vec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn ldl_regularizes_singular_pivot() {
        let a = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]);
        let f = Ldl::factor(&a, 2, 1e-10, 1e-12);
        assert_eq!(f.regularized_pivots(), 1);
    }

    #[test]
    fn outer_product_and_quad_form() {
        let mut m = Matrix::zeros(2, 2);
        m.add_outer(2.0, &[1.0, -1.0], &[1.0, -1.0]);
        assert_eq!(m.quad_form(&[1.0, 1.0]), 0.0);
        assert_eq!(m.quad_form(&[1.0, 0.0]), 2.0);
        assert_eq!(m.max_asymmetry(), 0.0);
        assert_eq!(m.tr_mul_vec(&[1.0, 0.0]), vec![2.0, -2.0]);
    }
}
