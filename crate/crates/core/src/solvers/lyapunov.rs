use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_hurwitz, kron, spectral_abscissa, symmetrize};

/// Solves `a X + X a^T + n = 0` for Hurwitz `a` by a dense solve of the
/// Kronecker-vectorized system `(I ⊗ a + a ⊗ I) vec(X) = -vec(n)`.
///
/// Intended for the 2×2 and 4×4 problems that appear here (at most a 16×16
/// linear solve). The result is symmetrized when `n` is symmetric.
pub fn solve_lyapunov(a: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = a.nrows();
    if !a.is_square() || n.shape() != (dim, dim) {
        return Err(Error::Input(format!(
            "lyapunov shapes do not match: a {:?}, n {:?}",
            a.shape(),
            n.shape()
        )));
    }
    if !is_hurwitz(a) {
        return Err(Error::Solver(format!(
            "lyapunov operator is not Hurwitz (spectral abscissa {:.3e})",
            spectral_abscissa(a)
        )));
    }
    let id = DMatrix::<f64>::identity(dim, dim);
    let op = kron(&id, a) + kron(a, &id);
    let rhs = -DVector::from_column_slice(n.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("singular Kronecker operator".into()))?;
    let x = DMatrix::from_column_slice(dim, dim, sol.as_slice());
    if (n - n.transpose()).amax() <= 1e-14 * n.amax().max(f64::MIN_POSITIVE) {
        Ok(symmetrize(&x))
    } else {
        Ok(x)
    }
}

/// `‖a X + X a^T + n‖_F`.
pub fn lyapunov_residual(a: &DMatrix<f64>, x: &DMatrix<f64>, n: &DMatrix<f64>) -> f64 {
    (a * x + x * a.transpose() + n).norm()
}
