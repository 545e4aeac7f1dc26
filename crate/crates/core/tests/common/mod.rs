//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use glmm_mcmc::diagnostics::batch_means_mcse;
use glmm_mcmc::model::{Family, ModelSpec};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

/// Log-likelihood of one observation, coded from the textbook formulas.
pub fn naive_log_lik(family: Family, y: f64, trials: f64, eta: f64) -> f64 {
    match family {
        Family::Logistic => y * eta - trials * (1.0 + eta.exp()).ln(),
        Family::Probit => {
            let n = Normal::new(0.0, 1.0).unwrap();
            let mut acc = 0.0;
            if y > 0.0 {
                acc += y * n.cdf(eta).ln();
            }
            if trials - y > 0.0 {
                acc += (trials - y) * n.cdf(-eta).ln();
            }
            acc
        }
        Family::PoissonLog => y * eta - eta.exp(),
    }
}

/// A one-random-effect model: `ηᵢ = offsetᵢ + zᵢ u`, `u ~ N(0, g)`.
pub struct ScalarFixture {
    pub family: Family,
    pub y: Vec<u64>,
    pub trials: Vec<u64>,
    pub offset: Vec<f64>,
    pub z: Vec<f64>,
    pub g: f64,
}

impl ScalarFixture {
    pub fn log_post(&self, u: f64) -> f64 {
        let mut acc = -0.5 * u * u / self.g;
        for i in 0..self.y.len() {
            acc += naive_log_lik(self.family, self.y[i] as f64, self.trials[i] as f64, self.offset[i] + self.z[i] * u);
        }
        acc
    }

    /// Model with `X` a single column equal to the offsets and `β = 1`.
    pub fn model(&self) -> (ModelSpec<f64>, DVector<f64>) {
        let m = self.y.len();
        let model = ModelSpec::new(
            self.family,
            self.y.clone(),
            Some(self.trials.clone()),
            DMatrix::from_column_slice(m, 1, &self.offset),
            DMatrix::from_column_slice(m, 1, &self.z),
            vec![1],
        )
        .unwrap();
        (model, DVector::from_element(1, 1.0))
    }

    /// Posterior mean and variance of `u` by trapezoid quadrature.
    pub fn quadrature_moments(&self) -> (f64, f64) {
        let (lo, hi, n) = (-30.0, 30.0, 240_001);
        let h = (hi - lo) / (n - 1) as f64;
        let logs: Vec<f64> = (0..n).map(|k| self.log_post(lo + k as f64 * h)).collect();
        let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (k, l) in logs.iter().enumerate() {
            let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 } * (l - mx).exp();
            let u = lo + k as f64 * h;
            s0 += w;
            s1 += w * u;
            s2 += w * u * u;
        }
        let mean = s1 / s0;
        (mean, s2 / s0 - mean * mean)
    }
}

/// The m=4, q=1 fixtures used for the conditional kernels.
pub fn scalar_fixture(family: Family) -> ScalarFixture {
    match family {
        Family::Logistic => ScalarFixture {
            family,
            y: vec![1, 0, 1, 1],
            trials: vec![1; 4],
            offset: vec![0.3, -0.2, 0.5, 0.1],
            z: vec![1.0, 1.0, -1.0, 0.5],
            g: 1.5,
        },
        Family::Probit => ScalarFixture {
            family,
            y: vec![1, 0, 1, 1],
            trials: vec![1; 4],
            offset: vec![-0.2, 0.4, 0.1, -0.3],
            z: vec![1.0, 1.0, 1.0, 1.0],
            g: 2.0,
        },
        Family::PoissonLog => ScalarFixture {
            family,
            y: vec![2, 0, 3, 1],
            trials: vec![1; 4],
            offset: vec![0.2, -0.5, 0.4, 0.0],
            z: vec![1.0, 1.0, 1.0, -1.0],
            g: 0.5,
        },
    }
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|k| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[k] += h;
            b[k] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        }),
    )
}

/// Largest `|a − b| / max(1, |b|)` over coordinates.
pub fn max_rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// `|mean − target|` in units of the batch-means MCSE.
pub fn z_mean(xs: &[f64], target: f64) -> f64 {
    (mean(xs) - target).abs() / batch_means_mcse(xs).unwrap()
}

/// Same for the variance about a known mean.
pub fn z_variance(xs: &[f64], mu: f64, target: f64) -> f64 {
    let sq: Vec<f64> = xs.iter().map(|x| (x - mu).powi(2)).collect();
    z_mean(&sq, target)
}

/// Fixed-effects GLM MLE by Newton's method on the logistic or Poisson
/// log-likelihood.
pub fn glm_newton(family: Family, y: &[u64], trials: &[u64], x: &DMatrix<f64>) -> DVector<f64> {
    let (m, p) = x.shape();
    let mut beta = DVector::zeros(p);
    for _ in 0..100 {
        let eta = x * &beta;
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for i in 0..m {
            let (mu, w) = match family {
                Family::Logistic => {
                    let pr = 1.0 / (1.0 + (-eta[i]).exp());
                    (trials[i] as f64 * pr, trials[i] as f64 * pr * (1.0 - pr))
                }
                Family::PoissonLog => (eta[i].exp(), eta[i].exp()),
                Family::Probit => unimplemented!("oracle covers canonical links"),
            };
            let xi = x.row(i).transpose();
            grad += &xi * (y[i] as f64 - mu);
            info += &xi * xi.transpose() * w;
        }
        let step = info.try_inverse().unwrap() * grad;
        beta += &step;
        if step.amax() < 1e-12 {
            break;
        }
    }
    beta
}

/// `E[PG(b, c)]` from the infinite-convolution representation, summed
/// directly with an integral tail correction.
pub fn pg_mean_series(b: f64, c: f64) -> f64 {
    let pi2 = std::f64::consts::PI.powi(2);
    let c2 = c * c / (4.0 * pi2);
    let k_max = 200_000;
    let mut s = 0.0;
    for k in (1..=k_max).rev() {
        let a = k as f64 - 0.5;
        s += 1.0 / (a * a + c2);
    }
    // Σ_{k>K} 1/(k−½)² ≈ 1/K
    s += 1.0 / k_max as f64;
    b * s / (2.0 * pi2)
}

/// Kolmogorov-Smirnov statistic of `xs` against `cdf`.
pub fn ks_statistic(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Gaussian AR(1) path with unit marginal variance.
pub fn ar1(rng: &mut impl rand::Rng, rho: f64, n: usize) -> Vec<f64> {
    use rand_distr::StandardNormal;
    let s = (1.0 - rho * rho).sqrt();
    let mut x: f64 = rng.sample(StandardNormal);
    (0..n)
        .map(|_| {
            let out = x;
            x = rho * x + s * rng.sample::<f64, _>(StandardNormal);
            out
        })
        .collect()
}

/// The binomial-logistic m=4, q=1 fixture used for likelihood fitting:
/// `ηᵢ = β + zᵢ u`, `u ~ N(0, 1/λ)`, ten trials per observation.
pub struct LikelihoodFixture {
    pub y: Vec<u64>,
    pub trials: Vec<u64>,
    pub z: Vec<f64>,
}

pub fn likelihood_fixture() -> LikelihoodFixture {
    LikelihoodFixture {
        y: vec![9, 7, 2, 3],
        trials: vec![10; 4],
        z: vec![1.0, 1.0, -1.0, -1.0],
    }
}

impl LikelihoodFixture {
    pub fn model(&self) -> ModelSpec<f64> {
        ModelSpec::new(
            Family::Logistic,
            self.y.clone(),
            Some(self.trials.clone()),
            DMatrix::from_element(4, 1, 1.0),
            DMatrix::from_column_slice(4, 1, &self.z),
            vec![1],
        )
        .unwrap()
    }

    /// Marginal log-likelihood by quadrature, binomial coefficients dropped.
    pub fn log_likelihood(&self, beta: f64, lambda: f64) -> f64 {
        let sd = lambda.sqrt().recip();
        let n = 4001;
        let (lo, hi) = (-12.0 * sd, 12.0 * sd);
        let h = (hi - lo) / (n - 1) as f64;
        let logs: Vec<f64> = (0..n)
            .map(|k| {
                let u = lo + k as f64 * h;
                let mut l = -0.5 * lambda * u * u + 0.5 * lambda.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                for i in 0..4 {
                    l += naive_log_lik(Family::Logistic, self.y[i] as f64, self.trials[i] as f64, beta + self.z[i] * u);
                }
                l
            })
            .collect();
        let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logs
            .iter()
            .enumerate()
            .map(|(k, l)| if k == 0 || k == n - 1 { 0.5 } else { 1.0 } * (l - mx).exp())
            .sum();
        mx + (s * h).ln()
    }

    /// Grid maximizer over `(β, log λ)`, refined once around the coarse optimum.
    pub fn mle(&self) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        let search = |b0: f64, bw: f64, l0: f64, lw: f64, best: &mut (f64, f64, f64)| {
            for i in 0..=80 {
                for j in 0..=80 {
                    let b = b0 - bw + 2.0 * bw * i as f64 / 80.0;
                    let ll = l0 - lw + 2.0 * lw * j as f64 / 80.0;
                    let v = self.log_likelihood(b, ll.exp());
                    if v > best.0 {
                        *best = (v, b, ll);
                    }
                }
            }
        };
        search(0.0, 2.0, 0.0, 3.0, &mut best);
        let (b, l) = (best.1, best.2);
        search(b, 0.05, l, 0.075, &mut best);
        (best.1, best.2.exp())
    }
}
