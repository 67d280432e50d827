//! Dense helpers shared by the model and estimation code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of jittered retries attempted when a Cholesky factorization fails.
pub const JITTER_RETRIES: usize = 3;
/// Relative size of the first jitter, scaled by the mean diagonal.
pub const JITTER_SCALE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix of order {dim} is not positive definite after {retries} jittered retries")]
    NotPositiveDefinite { dim: usize, retries: usize },
}

/// Dense row-major matrix used for per-row design storage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RowMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn from_rows(ncols: usize, data: Vec<f64>) -> Self {
        assert!(ncols == 0 || data.len() % ncols == 0);
        let nrows = if ncols == 0 { 0 } else { data.len() / ncols };
        Self { nrows, ncols, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    /// `self · v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.ncols);
        (0..self.nrows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.nrows, self.ncols, &self.data)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `m += w · a bᵀ` restricted to the block starting at `(row0, col0)`.
pub fn add_outer(m: &mut DMatrix<f64>, row0: usize, col0: usize, w: f64, a: &[f64], b: &[f64]) {
    if w == 0.0 {
        return;
    }
    for (j, bj) in b.iter().enumerate() {
        let wb = w * bj;
        if wb == 0.0 {
            continue;
        }
        let mut col = m.column_mut(col0 + j);
        for (i, ai) in a.iter().enumerate() {
            col[row0 + i] += ai * wb;
        }
    }
}

/// Cholesky factor of a symmetric matrix, retrying with diagonal jitter
/// `10^k · 1e-8 · mean(diag)` for `k = 0, 1, 2` when the plain factorization fails.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, LinalgError> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let mean_diag = if n == 0 {
        1.0
    } else {
        (m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(f64::MIN_POSITIVE)
    };
    let mut jitter = JITTER_SCALE * mean_diag;
    for _ in 0..JITTER_RETRIES {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            log::debug!("cholesky succeeded with jitter {jitter:e}");
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(LinalgError::NotPositiveDefinite {
        dim: n,
        retries: JITTER_RETRIES,
    })
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    Ok(cholesky_with_jitter(m)?.inverse())
}

pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    if m.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    Ok(cholesky_with_jitter(m)?.solve(rhs))
}

/// `tr(A B)` for square matrices of equal order.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Copy of `m` without row and column `k`.
pub fn drop_row_col(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    m.clone().remove_row(k).remove_column(k)
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_semidefinite_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(Cholesky::new(m.clone()).is_none());
        assert!(cholesky_with_jitter(&m).is_ok());
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(
            cholesky_with_jitter(&m).unwrap_err(),
            LinalgError::NotPositiveDefinite { dim: 2, retries: 3 }
        );
    }

    #[test]
    fn outer_product_accumulates_into_block() {
        let mut m = DMatrix::zeros(3, 3);
        add_outer(&mut m, 1, 0, 2.0, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(m[(1, 0)], 6.0);
        assert_eq!(m[(2, 1)], 16.0);
        assert_eq!(m[(0, 0)], 0.0);
    }

    #[test]
    fn trace_of_product_matches_nalgebra() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]);
        assert!((trace_of_product(&a, &b) - (&a * &b).trace()).abs() < 1e-15);
    }
}
