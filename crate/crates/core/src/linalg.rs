//! Symmetric square roots of SPD matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest one make a matrix
/// numerically singular for our purposes.
pub const SPD_RELATIVE_FLOOR: f64 = 1e-12;

/// A^{1/2} and A^{-1/2} for a symmetric positive-definite A.
#[derive(Debug, Clone)]
pub struct SpdRoot {
    pub sqrt: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
}

pub fn spd_root(a: &DMatrix<f64>) -> Result<SpdRoot> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::Matrix(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Matrix("matrix has non-finite entries".into()));
    }
    let scale = a.amax();
    let asym = (a - a.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::Matrix(format!("matrix is not symmetric (|A-Aᵀ| = {asym:.3e})")));
    }
    let eig = SymmetricEigen::new(a.clone());
    let max_ev = eig.eigenvalues.max();
    let min_ev = eig.eigenvalues.min();
    if max_ev <= 0.0 || min_ev <= SPD_RELATIVE_FLOOR * max_ev {
        return Err(Error::Matrix(format!(
            "matrix is not positive definite (eigenvalues in [{min_ev:.3e}, {max_ev:.3e}])"
        )));
    }
    let q = &eig.eigenvectors;
    let rebuild = |f: fn(f64) -> f64| {
        let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| f(l)));
        let m = q * DMatrix::from_diagonal(&d) * q.transpose();
        // symmetrise away rounding
        (&m + m.transpose()) * 0.5
    };
    Ok(SpdRoot {
        sqrt: rebuild(f64::sqrt),
        inv_sqrt: rebuild(|l| 1.0 / l.sqrt()),
    })
}
