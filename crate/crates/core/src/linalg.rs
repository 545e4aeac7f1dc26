//! Thin helpers over nalgebra's dense Cholesky factorization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Chol<T> = Cholesky<T, Dyn>;

/// Cholesky factor of a symmetric positive-definite matrix; `what` names the
/// matrix in the error message.
pub fn cholesky<T: Real>(m: DMatrix<T>, what: &str) -> Result<Chol<T>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Solves `L w = b` with the lower factor.
pub fn solve_lower<T: Real>(chol: &Chol<T>, b: &DVector<T>) -> DVector<T> {
    chol.l_dirty()
        .solve_lower_triangular(b)
        .expect("Cholesky factor has a nonzero diagonal")
}

/// Solves `Lᵀ x = b` with the lower factor.
pub fn solve_lower_transpose<T: Real>(chol: &Chol<T>, b: &DVector<T>) -> DVector<T> {
    chol.l_dirty()
        .tr_solve_lower_triangular(b)
        .expect("Cholesky factor has a nonzero diagonal")
}

/// `log |A|` from the factor of `A`.
pub fn log_det<T: Real>(chol: &Chol<T>) -> T {
    let l = chol.l_dirty();
    let mut acc = T::zero();
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    acc + acc
}

/// `Mᵀ diag(w) M` without forming the diagonal matrix.
pub fn weighted_gram<T: Real>(m: &DMatrix<T>, w: &DVector<T>) -> DMatrix<T> {
    let mut scaled = m.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= w[i];
    }
    m.tr_mul(&scaled)
}
