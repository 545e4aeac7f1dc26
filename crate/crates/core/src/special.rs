//! Standard normal special functions evaluated stably in the tails.

use crate::scalar::{lit, Real};

/// Below this argument the log-CDF and inverse Mills ratio switch to the
/// continued-fraction branch.
const TAIL_CUTOFF: f64 = -8.0;
const CF_DEPTH: usize = 80;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf<T: Real>(x: T) -> T {
    (-(x * x) * lit(0.5)).exp() * lit(FRAC_1_SQRT_2PI)
}

/// Standard normal CDF.
pub fn norm_cdf<T: Real>(x: T) -> T {
    lit::<T>(0.5) * (-x * lit(std::f64::consts::FRAC_1_SQRT_2)).erfc()
}

/// Upper-tail Mills ratio `(1 - Φ(t)) / φ(t)` for large positive `t`,
/// by backward evaluation of Laplace's continued fraction.
fn upper_mills<T: Real>(t: T) -> T {
    let mut acc = t;
    for k in (1..=CF_DEPTH).rev() {
        acc = t + lit::<T>(k as f64) / acc;
    }
    T::one() / acc
}

/// `log Φ(x)`, finite for every finite `x`.
pub fn log_norm_cdf<T: Real>(x: T) -> T {
    if x < lit(TAIL_CUTOFF) {
        let t = -x;
        -(x * x) * lit(0.5) - lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + upper_mills(t).ln()
    } else if x <= T::zero() {
        norm_cdf(x).ln()
    } else {
        // log(1 - Φ(-x))
        (-norm_cdf(-x)).ln_1p()
    }
}

/// Inverse Mills ratio `φ(x) / Φ(x)`.
pub fn inv_mills<T: Real>(x: T) -> T {
    if x < lit(TAIL_CUTOFF) {
        T::one() / upper_mills(-x)
    } else {
        norm_pdf(x) / norm_cdf(x)
    }
}

/// Standard normal quantile.
pub fn norm_quantile<T: Real>(p: T) -> T {
    -(lit::<T>(2.0) * p).erfc_inv() * lit(std::f64::consts::SQRT_2)
}
