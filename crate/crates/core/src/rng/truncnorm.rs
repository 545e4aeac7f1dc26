use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Which side of zero a truncated normal lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `(0, ∞)`
    Positive,
    /// `(−∞, 0]`
    NonPositive,
}

impl Side {
    /// Side matching a binary response: `y = 1` positive, `y = 0` nonpositive.
    pub fn from_response(positive: bool) -> Self {
        if positive {
            Side::Positive
        } else {
            Side::NonPositive
        }
    }
}

const INVERSE_CDF_LIMIT: f64 = 5.0;

/// Draws from `N(μ, σ²)` restricted to one side of zero.
pub fn sample_truncated_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, mu: T, var: T, side: Side) -> Result<T> {
    let (mu, var) = (to_f64(mu), to_f64(var));
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Domain(format!("truncated normal variance must be positive, got {var}")));
    }
    if !mu.is_finite() {
        return Err(Error::Domain(format!("truncated normal mean must be finite, got {mu}")));
    }
    let sd = var.sqrt();
    let x = match side {
        Side::Positive => mu + sd * standard_above(rng, -mu / sd),
        Side::NonPositive => -(-mu + sd * standard_above(rng, mu / sd)),
    };
    // Rounding in `μ + σz` can land exactly on the wrong side of zero.
    let x = match side {
        Side::Positive if x <= 0.0 => f64::MIN_POSITIVE,
        Side::NonPositive if x > 0.0 => 0.0,
        _ => x,
    };
    Ok(lit(x))
}

/// Standard normal conditioned on `Z > alpha`.
fn standard_above<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> f64 {
    if alpha <= -INVERSE_CDF_LIMIT {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z > alpha {
                return z;
            }
        }
    } else if alpha < INVERSE_CDF_LIMIT {
        let tail = statrs::function::erf::erfc(alpha * std::f64::consts::FRAC_1_SQRT_2);
        loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                let z = std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(u * tail);
                if z.is_finite() && z > alpha {
                    return z;
                }
            }
        }
    } else {
        // Exponential proposal with the optimal rate.
        let rate = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
        loop {
            let e: f64 = Exp1.sample(rng);
            let z = alpha + e / rate;
            let u: f64 = rng.random();
            if u.ln() <= -0.5 * (z - rate) * (z - rate) {
                return z;
            }
        }
    }
}
