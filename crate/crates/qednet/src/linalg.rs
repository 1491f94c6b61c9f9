//! Thin dense linear-algebra helpers over nalgebra.
//!
//! Matrix sizes in this crate are desk scale (I, J at most a few dozen),
//! so plain LU with partial pivoting, full symmetric eigendecompositions,
//! and even the Kronecker-vectorized Lyapunov solve are all cheap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `m x = rhs` by LU with partial pivoting.
pub fn solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::SingularSystem(format!("{}x{} LU solve failed", m.nrows(), m.ncols())))
}

/// Matrix inverse by LU; errors on singularity.
pub fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem(format!("{}x{} inverse failed", m.nrows(), m.ncols())))
}

/// Least-squares solution of `m x = rhs` via SVD (tolerance scaled to the
/// largest singular value).
pub fn lstsq(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = m.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    svd.solve(rhs, eps)
        .map_err(|e| Error::SingularSystem(format!("SVD least squares failed: {e}")))
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m)[0]
}

/// Solves the continuous-time Lyapunov equation `a^T g + g a = q` for `g`
/// by Kronecker vectorization: `(I (x) a^T + a^T (x) I) vec(g) = vec(q)`.
/// Unique and symmetric positive definite when the spectrum of `a` lies in
/// the open right half-plane and `q` is symmetric positive definite.
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    debug_assert_eq!(q.nrows(), n);
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let big = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol = solve(&big, &rhs)?;
    let g = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&g + g.transpose()) * 0.5)
}

/// Sum of entries of a vector.
pub fn total(v: &DVector<f64>) -> f64 {
    v.iter().sum()
}
