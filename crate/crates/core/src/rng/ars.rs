//! Tangent-based adaptive rejection sampling for univariate log-concave
//! densities.

use rand::Rng;

use crate::error::{Error, Result};

/// Domain of a univariate density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Real,
    Positive,
}

/// Unnormalized log-concave density with its derivative.
pub struct LogConcaveDensity<'a> {
    log_density: Box<dyn Fn(f64) -> f64 + 'a>,
    derivative: Box<dyn Fn(f64) -> f64 + 'a>,
    support: Support,
    mode: Option<f64>,
    scale: Option<f64>,
}

impl<'a> LogConcaveDensity<'a> {
    pub fn new(
        support: Support,
        log_density: impl Fn(f64) -> f64 + 'a,
        derivative: impl Fn(f64) -> f64 + 'a,
    ) -> Self {
        Self {
            log_density: Box::new(log_density),
            derivative: Box::new(derivative),
            support,
            mode: None,
            scale: None,
        }
    }

    /// Approximate mode; the initial envelope is built around it.
    pub fn with_mode(mut self, mode: f64) -> Self {
        self.mode = Some(mode);
        self
    }

    /// Approximate standard deviation, used to space the initial abscissae.
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = Some(scale);
        self
    }

    pub fn support(&self) -> Support {
        self.support
    }
}

const MAX_POINTS: usize = 64;
const MAX_EXPANSIONS: usize = 200;
const MAX_PROPOSALS: usize = 100_000;

#[derive(Debug, Clone, Copy)]
struct Knot {
    x: f64,
    h: f64,
    dh: f64,
}

struct Envelope {
    knots: Vec<Knot>,
    lower: f64,
    // z[i] is the right edge of the hull piece tangent at knot i.
    z: Vec<f64>,
    log_mass: Vec<f64>,
}

impl Envelope {
    fn build(knots: Vec<Knot>, lower: f64) -> Result<Self> {
        let k = knots.len();
        let mut z = Vec::with_capacity(k);
        for i in 0..k - 1 {
            let (a, b) = (knots[i], knots[i + 1]);
            let ds = a.dh - b.dh;
            let zi = if ds.abs() <= 1e-12 * (a.dh.abs() + b.dh.abs()).max(1e-300) {
                0.5 * (a.x + b.x)
            } else {
                (b.h - a.h - b.x * b.dh + a.x * a.dh) / ds
            };
            if !zi.is_finite() || ds < -1e-9 * (a.dh.abs() + b.dh.abs() + 1.0) {
                return Err(Error::NotLogConcave(format!(
                    "derivative increases between {} and {}",
                    a.x, b.x
                )));
            }
            z.push(zi.clamp(a.x, b.x));
        }
        z.push(f64::INFINITY);
        let mut env = Self {
            knots,
            lower,
            z,
            log_mass: Vec::with_capacity(k),
        };
        for i in 0..k {
            let (zl, zr) = env.piece(i);
            let m = log_piece_mass(env.knots[i], zl, zr);
            if m.is_nan() || m == f64::INFINITY {
                return Err(Error::NotLogConcave("envelope has infinite mass".into()));
            }
            env.log_mass.push(m);
        }
        Ok(env)
    }

    fn piece(&self, i: usize) -> (f64, f64) {
        let zl = if i == 0 { self.lower } else { self.z[i - 1] };
        (zl, self.z[i])
    }

    fn upper(&self, x: f64) -> f64 {
        let i = self.z.partition_point(|&zi| zi < x).min(self.knots.len() - 1);
        let k = self.knots[i];
        k.h + k.dh * (x - k.x)
    }

    fn squeeze(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x < self.knots[0].x || x > self.knots[n - 1].x {
            return f64::NEG_INFINITY;
        }
        let j = self.knots.partition_point(|k| k.x <= x).clamp(1, n - 1);
        let (a, b) = (self.knots[j - 1], self.knots[j]);
        if b.x == a.x {
            return a.h.min(b.h);
        }
        ((b.x - x) * a.h + (x - a.x) * b.h) / (b.x - a.x)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let top = self.log_mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = self.log_mass.iter().map(|m| (m - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut i = 0;
        while i + 1 < weights.len() && target >= weights[i] {
            target -= weights[i];
            i += 1;
        }
        let (zl, zr) = self.piece(i);
        let s = self.knots[i].dh;
        let u: f64 = rng.random();
        let width = zr - zl;
        let x = if s.abs() < 1e-300 {
            zl + u * width
        } else if s * width > 1.0 {
            // Steep rising piece: anchor at the right edge.
            let tail = (-s * width).exp();
            zr + (tail + u * (1.0 - tail)).ln() / s
        } else {
            // e^{s(x − zl)} − 1 = u (e^{s w} − 1), stable as s → 0.
            zl + (u * (s * width).exp_m1()).ln_1p() / s
        };
        x.clamp(zl, zr)
    }
}

/// `log ∫_{zl}^{zr} exp(h + s (x − x₀)) dx`.
fn log_piece_mass(k: Knot, zl: f64, zr: f64) -> f64 {
    let s = k.dh;
    let width = zr - zl;
    if width <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if s.abs() < 1e-300 {
        return k.h + width.ln();
    }
    if s > 0.0 {
        if zr == f64::INFINITY {
            return f64::INFINITY;
        }
        let keep = if width.is_finite() { -(-s * width).exp_m1() } else { 1.0 };
        k.h + s * (zr - k.x) + keep.ln() - s.ln()
    } else {
        if zl == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        let keep = if width.is_finite() { -(s * width).exp_m1() } else { 1.0 };
        k.h + s * (zl - k.x) + keep.ln() - (-s).ln()
    }
}

fn knot(f: &LogConcaveDensity<'_>, x: f64) -> Result<Knot> {
    let h = (f.log_density)(x);
    let dh = (f.derivative)(x);
    if h.is_nan() || h == f64::INFINITY || !dh.is_finite() {
        return Err(Error::Domain(format!(
            "log-density or derivative not finite at {x} (h={h}, h'={dh})"
        )));
    }
    Ok(Knot { x, h, dh })
}

fn initial_knots(f: &LogConcaveDensity<'_>) -> Result<Vec<Knot>> {
    let scale = f.scale.filter(|s| s.is_finite() && *s > 0.0).unwrap_or(1.0);
    let mut xs = match f.support {
        Support::Real => {
            let m = f.mode.filter(|m| m.is_finite()).unwrap_or(0.0);
            vec![m - 2.0 * scale, m, m + 2.0 * scale]
        }
        Support::Positive => {
            let m = f.mode.filter(|m| m.is_finite() && *m > 0.0).unwrap_or(scale);
            let left = if m - 2.0 * scale > 0.0 { m - 2.0 * scale } else { 0.5 * m };
            let left = if left < m { left } else { 0.5 * m };
            vec![left, m, m + 2.0 * scale]
        }
    };
    xs.dedup();
    let mut knots = xs.into_iter().map(|x| knot(f, x)).collect::<Result<Vec<_>>>()?;

    let mut step = 2.0 * scale;
    for _ in 0..MAX_EXPANSIONS {
        let last = *knots.last().unwrap();
        if last.dh < 0.0 {
            break;
        }
        step *= 2.0;
        knots.push(knot(f, last.x + step)?);
    }
    if knots.last().unwrap().dh >= 0.0 {
        return Err(Error::NotLogConcave("density does not decay to the right".into()));
    }
    if f.support == Support::Real {
        let mut step = 2.0 * scale;
        for _ in 0..MAX_EXPANSIONS {
            let first = knots[0];
            if first.dh > 0.0 {
                break;
            }
            step *= 2.0;
            knots.insert(0, knot(f, first.x - step)?);
        }
        if knots[0].dh <= 0.0 {
            return Err(Error::NotLogConcave("density does not decay to the left".into()));
        }
    }
    // The log-density may be -inf at a knot when far in a tail; drop those.
    knots.retain(|k| k.h.is_finite());
    if knots.is_empty() {
        return Err(Error::Domain("log-density is -inf at every initial abscissa".into()));
    }
    Ok(knots)
}

/// Exact draw from the normalized density `f`.
pub fn sample_log_concave<R: Rng + ?Sized>(rng: &mut R, f: &LogConcaveDensity<'_>) -> Result<f64> {
    let lower = match f.support {
        Support::Real => f64::NEG_INFINITY,
        Support::Positive => 0.0,
    };
    let mut env = Envelope::build(initial_knots(f)?, lower)?;
    for _ in 0..MAX_PROPOSALS {
        let x = env.draw(rng);
        if f.support == Support::Positive && x <= 0.0 {
            continue;
        }
        let log_u = rng.random::<f64>().ln();
        let u = env.upper(x);
        if log_u <= env.squeeze(x) - u {
            return Ok(x);
        }
        let k = knot(f, x)?;
        let tol = 1e-8 * (1.0 + k.h.abs());
        if k.h > u + tol {
            return Err(Error::NotLogConcave(format!(
                "log-density {} exceeds the tangent envelope {} at {x}",
                k.h, u
            )));
        }
        if k.h < env.squeeze(x) - tol {
            return Err(Error::NotLogConcave(format!(
                "log-density {} falls below the chord squeeze at {x}",
                k.h
            )));
        }
        if log_u <= k.h - u {
            return Ok(x);
        }
        if env.knots.len() < MAX_POINTS && k.h.is_finite() {
            let mut knots = env.knots.clone();
            let pos = knots.partition_point(|p| p.x < x);
            if knots.get(pos).is_none_or(|p| p.x != x) {
                knots.insert(pos, k);
                env = Envelope::build(knots, lower)?;
            }
        }
    }
    Err(Error::Domain("adaptive rejection sampler failed to accept a proposal".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn moments(f: &LogConcaveDensity<'_>, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = RngStream::new(seed);
        let xs: Vec<f64> = (0..n).map(|_| sample_log_concave(&mut rng, f).unwrap()).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        (m, v)
    }

    #[test]
    fn standard_normal() {
        let f = LogConcaveDensity::new(Support::Real, |x| -0.5 * x * x, |x| -x);
        let (m, v) = moments(&f, 40_000, 1);
        assert!(m.abs() < 0.02, "{m}");
        assert!((v - 1.0).abs() < 0.03, "{v}");
    }

    #[test]
    fn shifted_far_from_hint() {
        let f = LogConcaveDensity::new(Support::Real, |x| -0.5 * (x - 50.0) * (x - 50.0), |x| -(x - 50.0));
        let (m, _) = moments(&f, 5_000, 2);
        assert!((m - 50.0).abs() < 0.05, "{m}");
    }

    #[test]
    fn exponential_on_half_line() {
        let f = LogConcaveDensity::new(Support::Positive, |x| -2.0 * x, |_| -2.0);
        let (m, _) = moments(&f, 40_000, 3);
        assert!((m - 0.5).abs() < 0.01, "{m}");
    }

    #[test]
    fn knot_at_the_exact_mode() {
        // The tangent at the hinted mode has a slope of order 1e-16; the piece
        // around it must still be sampled as near-uniform.
        let (a, b, k) = (2.0f64, 1.5f64, 3.0f64);
        let mode = (b + (b * b + 4.0 * a * k).sqrt()) / (2.0 * a);
        let f = LogConcaveDensity::new(
            Support::Positive,
            move |h: f64| k * h.ln() - 0.5 * a * h * h + b * h,
            move |h: f64| k / h - a * h + b,
        )
        .with_mode(mode)
        .with_scale(0.5685);
        let (m, _) = moments(&f, 100_000, 4);
        // Midpoint-rule mean of the same density.
        let (mut s0, mut s1) = (0.0, 0.0);
        for i in 0..100_000 {
            let h = (i as f64 + 0.5) * 1e-4;
            let w = (k * h.ln() - 0.5 * a * h * h + b * h).exp();
            s0 += w;
            s1 += w * h;
        }
        assert!((m - s1 / s0).abs() < 0.005, "{m} vs {}", s1 / s0);
    }

    #[test]
    fn convex_log_density_is_detected() {
        // log f = x² − x⁴/10 is bimodal, so not log-concave.
        let f = LogConcaveDensity::new(Support::Real, |x| x * x - 0.1 * x.powi(4), |x| 2.0 * x - 0.4 * x.powi(3))
            .with_mode(0.0)
            .with_scale(0.2);
        let mut rng = RngStream::new(4);
        let mut hit = false;
        for _ in 0..200 {
            if let Err(Error::NotLogConcave(_)) = sample_log_concave(&mut rng, &f) {
                hit = true;
                break;
            }
        }
        assert!(hit);
    }
}
