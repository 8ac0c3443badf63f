//! Small dense linear-algebra helpers on top of nalgebra.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Solves `A x = b` for a row-major square `A` by LU, with one step of
/// iterative refinement. Returns the solution and the final residual
/// `||A x - b||_inf`.
pub fn solve_dense(n: usize, a_row_major: &[f64], b: &[f64]) -> Result<(Vec<f64>, f64)> {
    debug_assert_eq!(a_row_major.len(), n * n);
    let a = DMatrix::from_row_slice(n, n, a_row_major);
    let rhs = DVector::from_column_slice(b);
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("singular system".into()))?;
    let mut r = &rhs - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        let refined = &x + dx;
        let r2 = &rhs - &a * &refined;
        if r2.amax() <= r.amax() {
            x = refined;
            r = r2;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite solution".into()));
    }
    Ok((x.iter().copied().collect(), r.amax()))
}

/// Symmetric matrix stored as an nalgebra matrix, with helpers for the
/// quadratic forms used by the exploration bonus.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    cholesky: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SpdMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let cholesky = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Solver("matrix is not positive definite".into()))?;
        Ok(SpdMatrix { matrix, cholesky })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `x^T A^{-1} x`.
    pub fn inv_quad(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        let y = self.cholesky.solve(&v);
        v.dot(&y)
    }

    /// `x^T A x`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        v.dot(&(&self.matrix * &v))
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.cholesky.inverse()
    }

    pub fn ln_det(&self) -> f64 {
        self.cholesky.l_dirty().diagonal().iter().map(|x| 2.0 * x.ln()).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `sum_i w_i x_i x_i^T` plus `lambda I`.
pub fn gram(dim: usize, items: impl IntoIterator<Item = (f64, Vec<f64>)>, lambda: f64) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::identity(dim, dim) * lambda;
    for (w, x) in items {
        let v = DVector::from_column_slice(&x);
        m += (&v * v.transpose()) * w;
    }
    m
}
