//! Pólya-Gamma variates by the alternating-series rejection method.
//!
//! `PG(1, c)` is sampled as `J*(1, |c|/2) / 4`, where `J*` is drawn by
//! rejection from a mixture of a truncated inverse-Gaussian (left of
//! `t = 0.64`) and an exponential tail, accepting against partial sums of the
//! Jacobi theta series.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};
use crate::special::log_norm_cdf;

const TRUNC: f64 = 0.64;

/// Draws from `PG(b, c)` for integer `b ≥ 1` as a sum of `b` independent
/// `PG(1, c)` draws.
pub fn sample_polya_gamma<T: Real, R: Rng + ?Sized>(rng: &mut R, b: u64, c: T) -> Result<T> {
    if b < 1 {
        return Err(Error::Domain("Pólya-Gamma shape must be at least 1".into()));
    }
    let c = to_f64(c);
    if !c.is_finite() {
        return Err(Error::Domain(format!("Pólya-Gamma tilt must be finite, got {c}")));
    }
    let z = 0.5 * c.abs();
    let mix = exponential_mass(z);
    let mut acc = 0.0;
    for _ in 0..b {
        acc += jstar(rng, z, mix);
    }
    Ok(lit(0.25 * acc))
}

/// Probability of proposing from the exponential piece.
fn exponential_mass(z: f64) -> f64 {
    let k = PI * PI / 8.0 + 0.5 * z * z;
    let rt = TRUNC.sqrt();
    let b = (TRUNC * z - 1.0) / rt;
    let a = -(TRUNC * z + 1.0) / rt;
    let x0 = k.ln() + k * TRUNC;
    let xb = x0 - z + log_norm_cdf(b);
    let xa = x0 + z + log_norm_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Coefficient `a_n(x)` of the alternating series.
fn coef(n: u32, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * (0.5 * PI * x).ln() + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

fn jstar<R: Rng + ?Sized>(rng: &mut R, z: f64, mix: f64) -> f64 {
    let k = PI * PI / 8.0 + 0.5 * z * z;
    loop {
        let u: f64 = rng.random();
        let x = if u < mix {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / k
        } else {
            truncated_inverse_gaussian(rng, z)
        };
        let mut s = coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= coef(n, x);
                if y <= s {
                    return x;
                }
            } else {
                s += coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Inverse-Gaussian with mean `1/z`, shape 1, truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(rng: &mut R, z: f64) -> f64 {
    if 1.0 / TRUNC > z {
        loop {
            let (mut e1, mut e2): (f64, f64) = (Exp1.sample(rng), Exp1.sample(rng));
            while e1 * e1 > 2.0 * e2 / TRUNC {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            let d = 1.0 + e1 * TRUNC;
            let x = TRUNC / (d * d);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let my = mu * n * n;
            let mut x = mu + 0.5 * mu * my - 0.5 * mu * (4.0 * my + my * my).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < TRUNC {
                return x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn mean(b: u64, c: f64, n: usize, seed: u64) -> f64 {
        let mut rng = RngStream::new(seed);
        (0..n).map(|_| sample_polya_gamma(&mut rng, b, c).unwrap()).sum::<f64>() / n as f64
    }

    #[test]
    fn small_sample_means() {
        assert!((mean(1, 0.0, 40_000, 1) - 0.25).abs() < 0.004);
        assert!((mean(1, 2.0, 40_000, 2) - 0.190_398_5).abs() < 0.004);
        assert!((mean(1, 30.0, 40_000, 3) - 1.0 / 60.0).abs() < 0.001);
    }

    #[test]
    fn draws_are_positive_and_finite() {
        let mut rng = RngStream::new(9);
        for &c in &[-50.0, -3.0, 0.0, 1e-8, 0.7, 5.0, 300.0] {
            for _ in 0..500 {
                let w: f64 = sample_polya_gamma(&mut rng, 2, c).unwrap();
                assert!(w.is_finite() && w > 0.0);
            }
        }
    }

    #[test]
    fn zero_shape_is_rejected() {
        let mut rng = RngStream::new(9);
        assert!(sample_polya_gamma(&mut rng, 0, 1.0).is_err());
    }

    #[test]
    fn mixture_weight_is_a_probability() {
        for &z in &[0.0, 0.1, 1.0, 1.5625, 10.0] {
            let p = exponential_mass(z);
            assert!(p > 0.0 && p < 1.0, "z={z} p={p}");
        }
        // The exponential piece underflows for huge tilts.
        assert_eq!(exponential_mass(1e3), 0.0);
    }
}
