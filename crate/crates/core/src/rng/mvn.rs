use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Chol};
use crate::scalar::{lit, Real};

/// Vector of iid standard normals.
pub fn standard_normal_vector<T: Real, R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<T> {
    DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        lit(z)
    })
}

/// Draws `x ~ N(S⁻¹t, S⁻¹)` without forming `S⁻¹`:
/// factor `S = LLᵀ`, solve `Lw = t`, draw `z ~ N(0, I)`, solve `Lᵀx = w + z`.
pub fn sample_precision_normal<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    s: &DMatrix<T>,
    t: &DVector<T>,
) -> Result<DVector<T>> {
    if s.nrows() != t.len() {
        return Err(Error::Dimension(format!(
            "precision is {}x{} but shift has length {}",
            s.nrows(),
            s.ncols(),
            t.len()
        )));
    }
    let chol = linalg::cholesky(s.clone(), "precision matrix S")?;
    Ok(sample_precision_normal_factored(rng, &chol, t))
}

/// As [`sample_precision_normal`] with `S` already factored.
pub fn sample_precision_normal_factored<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    chol: &Chol<T>,
    t: &DVector<T>,
) -> DVector<T> {
    let w = linalg::solve_lower(chol, t);
    let z = standard_normal_vector(rng, t.len());
    linalg::solve_lower_transpose(chol, &(w + z))
}
