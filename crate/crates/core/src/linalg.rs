//! Thin bridge from `ndarray` matrices to faer's dense eigensolvers.

use faer::{Mat, Side};
use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;

use crate::{Error, Result};

fn to_faer(a: ArrayView2<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn check_square_finite(a: ArrayView2<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "matrix has non-finite entries".into(),
        ));
    }
    Ok(())
}

pub(crate) fn eigenvalues(a: ArrayView2<f64>) -> Result<Vec<Complex64>> {
    check_square_finite(a)?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    to_faer(a).eigenvalues().map_err(|_| Error::EigenFailure)
}

/// Right eigenpairs, unsorted, eigenvectors as columns.
pub(crate) fn eigen(a: ArrayView2<f64>) -> Result<(Vec<Complex64>, Array2<Complex64>)> {
    check_square_finite(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    let evd = to_faer(a).eigen().map_err(|_| Error::EigenFailure)?;
    let s = evd.S();
    let u = evd.U();
    let values = (0..n).map(|i| s[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(i, j)| u[(i, j)]);
    Ok((values, vectors))
}

/// Symmetric eigendecomposition `a = Q diag(w) Qᵀ`, eigenvalues ascending.
pub(crate) fn sym_eigen(a: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    check_square_finite(a)?;
    let n = a.nrows();
    let evd = to_faer(a)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::EigenFailure)?;
    let s = evd.S();
    let u = evd.U();
    let w = Array1::from_shape_fn(n, |i| s[i]);
    let q = Array2::from_shape_fn((n, n), |(i, j)| u[(i, j)]);
    Ok((w, q))
}

pub(crate) fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
