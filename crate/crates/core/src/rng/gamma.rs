use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Draws from Gamma with shape `a` and rate `b` (mean `a / b`).
pub fn sample_gamma<T: Real, R: Rng + ?Sized>(rng: &mut R, a: T, b: T) -> Result<T> {
    let (a, b) = (to_f64(a), to_f64(b));
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "gamma shape and rate must be positive and finite, got ({a}, {b})"
        )));
    }
    let g = Gamma::new(a, 1.0 / b).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(lit(g.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn rate_parameterization() {
        let mut rng = RngStream::new(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_gamma(&mut rng, 0.5, 2.0).unwrap()).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        assert!((m - 0.25).abs() < 0.005, "{m}");
        assert!((v - 0.125).abs() < 0.004, "{v}");
    }

    #[test]
    fn bad_parameters() {
        let mut rng = RngStream::new(11);
        assert!(sample_gamma(&mut rng, 0.0, 1.0).is_err());
        assert!(sample_gamma(&mut rng, 1.0, -1.0).is_err());
    }
}
