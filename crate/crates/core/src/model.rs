//! Model data, priors, and the log-densities and gradients every sampler
//! consumes.
//!
//! Three families are supported with the dispersion fixed at one: binomial
//! with logit link, binomial with probit link, and Poisson with log link.
//! All log-densities drop the same additive constants (binomial coefficients,
//! `log y!`, `2π` terms), so only differences are meaningful.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Chol};
use crate::scalar::{from_usize, lit, Real};
use crate::special::{inv_mills, log_norm_cdf};

/// Response family and link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Logistic,
    Probit,
    PoissonLog,
}

impl Family {
    pub fn is_binomial(self) -> bool {
        !matches!(self, Family::PoissonLog)
    }

    /// Log-likelihood contribution of one observation at linear predictor `eta`.
    #[inline]
    pub fn log_lik<T: Real>(self, y: T, trials: T, eta: T) -> T {
        match self {
            Family::Logistic => y * eta - trials * softplus(eta),
            Family::Probit => {
                let mut acc = T::zero();
                if y > T::zero() {
                    acc += y * log_norm_cdf(eta);
                }
                let failures = trials - y;
                if failures > T::zero() {
                    acc += failures * log_norm_cdf(-eta);
                }
                acc
            }
            Family::PoissonLog => y * eta - eta.exp(),
        }
    }

    /// Derivative of [`Family::log_lik`] with respect to `eta`.
    #[inline]
    pub fn score<T: Real>(self, y: T, trials: T, eta: T) -> T {
        match self {
            Family::Logistic => y - trials * logistic(eta),
            Family::Probit => {
                let mut acc = T::zero();
                if y > T::zero() {
                    acc += y * inv_mills(eta);
                }
                let failures = trials - y;
                if failures > T::zero() {
                    acc -= failures * inv_mills(-eta);
                }
                acc
            }
            Family::PoissonLog => y - eta.exp(),
        }
    }

    /// Minus the second derivative of [`Family::log_lik`] in `eta`; nonnegative
    /// for all three families.
    #[inline]
    pub fn curvature<T: Real>(self, y: T, trials: T, eta: T) -> T {
        match self {
            Family::Logistic => {
                let p = logistic(eta);
                trials * p * (T::one() - p)
            }
            Family::Probit => {
                // d/dx r(x) = −r(x)(x + r(x)) for the inverse Mills ratio r.
                let mut acc = T::zero();
                if y > T::zero() {
                    let r = inv_mills(eta);
                    acc += y * r * (eta + r);
                }
                let failures = trials - y;
                if failures > T::zero() {
                    let r = inv_mills(-eta);
                    acc += failures * r * (r - eta);
                }
                acc
            }
            Family::PoissonLog => eta.exp(),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Logistic => "logistic",
            Family::Probit => "probit",
            Family::PoissonLog => "poisson-log",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" | "logit" => Ok(Family::Logistic),
            "probit" => Ok(Family::Probit),
            "poisson-log" | "poisson" => Ok(Family::PoissonLog),
            other => Err(Error::Config(format!(
                "unknown family `{other}` (expected logistic, probit or poisson-log)"
            ))),
        }
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// `e^x / (1 + e^x)` without overflow.
#[inline]
pub fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Observed data and design of a GLMM.
#[derive(Debug, Clone)]
pub struct ModelSpec<T: Real> {
    family: Family,
    y: DVector<T>,
    trials: DVector<T>,
    y_counts: Vec<u64>,
    trial_counts: Vec<u64>,
    x: DMatrix<T>,
    z: DMatrix<T>,
    blocks: Vec<usize>,
}

impl<T: Real> ModelSpec<T> {
    /// Validates and assembles a model. `trials` defaults to all ones and is
    /// ignored for the Poisson family.
    pub fn new(
        family: Family,
        y: Vec<u64>,
        trials: Option<Vec<u64>>,
        x: DMatrix<T>,
        z: DMatrix<T>,
        blocks: Vec<usize>,
    ) -> Result<Self> {
        let m = y.len();
        if x.nrows() != m || z.nrows() != m {
            return Err(Error::Dimension(format!(
                "{m} responses but X has {} rows and Z has {} rows",
                x.nrows(),
                z.nrows()
            )));
        }
        if blocks.iter().any(|&b| b == 0) {
            return Err(Error::Dimension("random-effect block sizes must be positive".into()));
        }
        if blocks.iter().sum::<usize>() != z.ncols() {
            return Err(Error::Dimension(format!(
                "block sizes {blocks:?} do not sum to the {} columns of Z",
                z.ncols()
            )));
        }
        let trials = match (family, trials) {
            (Family::PoissonLog, _) | (_, None) => vec![1; m],
            (_, Some(t)) => t,
        };
        if trials.len() != m {
            return Err(Error::Dimension(format!(
                "{} trial counts for {m} responses",
                trials.len()
            )));
        }
        if family.is_binomial() {
            for (i, (&yi, &li)) in y.iter().zip(&trials).enumerate() {
                if li == 0 || yi > li {
                    return Err(Error::Domain(format!(
                        "observation {i}: need 0 <= y <= trials with trials >= 1, got y={yi}, trials={li}"
                    )));
                }
            }
        }
        let to_vec = |v: &[u64]| DVector::from_iterator(m, v.iter().map(|&k| lit::<T>(k as f64)));
        Ok(Self {
            family,
            y: to_vec(&y),
            trials: to_vec(&trials),
            y_counts: y,
            trial_counts: trials,
            x,
            z,
            blocks,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn trials(&self) -> &DVector<T> {
        &self.trials
    }

    /// Responses as integers.
    pub fn y_counts(&self) -> &[u64] {
        &self.y_counts
    }

    /// Trial counts `ℓᵢ` (all ones for Poisson).
    pub fn trial_counts(&self) -> &[u64] {
        &self.trial_counts
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<T> {
        &self.z
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    /// Number of observations `m`.
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Number of fixed effects `p`.
    pub fn n_fixed(&self) -> usize {
        self.x.ncols()
    }

    /// Number of random effects `q`.
    pub fn n_random(&self) -> usize {
        self.z.ncols()
    }

    /// Coordinate ranges of the random-effect blocks within `u`.
    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.blocks
            .iter()
            .map(|&len| {
                let r = start..start + len;
                start += len;
                r
            })
            .collect()
    }

    /// True when every trial count is one.
    pub fn is_binary(&self) -> bool {
        self.family.is_binomial() && self.trial_counts.iter().all(|&l| l == 1)
    }

    /// `γ = Xβ + Zu`.
    pub fn linear_predictor(&self, beta: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        assert_eq!(beta.len(), self.n_fixed(), "β has wrong length");
        assert_eq!(u.len(), self.n_random(), "u has wrong length");
        &self.x * beta + &self.z * u
    }

    /// Summed family log-likelihood at linear predictor `eta`.
    pub fn log_likelihood(&self, eta: &DVector<T>) -> T {
        let mut acc = T::zero();
        for i in 0..self.n_obs() {
            acc += self.family.log_lik(self.y[i], self.trials[i], eta[i]);
        }
        acc
    }

    /// Per-observation derivative of the log-likelihood with respect to `γᵢ`.
    pub fn score(&self, eta: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(
            self.n_obs(),
            (0..self.n_obs()).map(|i| self.family.score(self.y[i], self.trials[i], eta[i])),
        )
    }

    /// `D(λ) = ⊕ λⱼ I_{qⱼ}` as a diagonal vector.
    pub fn precision_diagonal(&self, lambda: &DVector<T>) -> DVector<T> {
        assert_eq!(lambda.len(), self.blocks.len(), "λ has wrong length");
        let mut d = DVector::zeros(self.n_random());
        for (j, r) in self.block_ranges().into_iter().enumerate() {
            for k in r {
                d[k] = lambda[j];
            }
        }
        d
    }

    /// `uⱼᵀuⱼ` for every block.
    pub fn block_sums_of_squares(&self, u: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(
            self.blocks.len(),
            self.block_ranges()
                .into_iter()
                .map(|r| u.rows(r.start, r.len()).norm_squared()),
        )
    }
}

/// A target density over `ℝᵈ` with its gradient.
pub trait LogDensity<T: Real> {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &DVector<T>) -> T;

    fn grad_log_density(&self, x: &DVector<T>) -> DVector<T>;

    fn log_density_and_grad(&self, x: &DVector<T>) -> (T, DVector<T>) {
        (self.log_density(x), self.grad_log_density(x))
    }
}

/// The conditional density `f(u | β, G, y)` of the random effects.
#[derive(Debug, Clone)]
pub struct ConditionalTarget<'a, T: Real> {
    model: &'a ModelSpec<T>,
    beta: DVector<T>,
    g: DMatrix<T>,
    g_inv: DMatrix<T>,
    log_det_g: T,
    offset: DVector<T>,
}

impl<'a, T: Real> ConditionalTarget<'a, T> {
    /// Target with an arbitrary positive-definite random-effect covariance `G`.
    pub fn new(model: &'a ModelSpec<T>, beta: DVector<T>, g: DMatrix<T>) -> Result<Self> {
        let q = model.n_random();
        if beta.len() != model.n_fixed() {
            return Err(Error::Dimension(format!(
                "β has length {}, model has {} fixed effects",
                beta.len(),
                model.n_fixed()
            )));
        }
        if g.nrows() != q || g.ncols() != q {
            return Err(Error::Dimension(format!(
                "G is {}x{}, expected {q}x{q}",
                g.nrows(),
                g.ncols()
            )));
        }
        let chol: Chol<T> = linalg::cholesky(g.clone(), "random-effect covariance G")?;
        let log_det_g = linalg::log_det(&chol);
        let g_inv = chol.inverse();
        let offset = model.x() * &beta;
        Ok(Self {
            model,
            beta,
            g,
            g_inv,
            log_det_g,
            offset,
        })
    }

    /// Target with `G = ⊕ λⱼ⁻¹ I_{qⱼ}` given per-block precisions `λ`.
    pub fn from_precisions(model: &'a ModelSpec<T>, beta: DVector<T>, lambda: &DVector<T>) -> Result<Self> {
        if lambda.len() != model.blocks().len() {
            return Err(Error::Dimension(format!(
                "{} precisions for {} blocks",
                lambda.len(),
                model.blocks().len()
            )));
        }
        if let Some(j) = lambda.iter().position(|&l| !(l > T::zero())) {
            return Err(Error::Domain(format!("λ[{j}] must be positive")));
        }
        let d = model.precision_diagonal(lambda);
        let g = DMatrix::from_diagonal(&d.map(|v| T::one() / v));
        Self::new(model, beta, g)
    }

    pub fn model(&self) -> &'a ModelSpec<T> {
        self.model
    }

    pub fn beta(&self) -> &DVector<T> {
        &self.beta
    }

    pub fn g(&self) -> &DMatrix<T> {
        &self.g
    }

    pub fn g_inv(&self) -> &DMatrix<T> {
        &self.g_inv
    }

    /// `Xβ`.
    pub fn offset(&self) -> &DVector<T> {
        &self.offset
    }

    pub fn linear_predictor(&self, u: &DVector<T>) -> DVector<T> {
        assert_eq!(u.len(), self.model.n_random(), "u has wrong length");
        &self.offset + self.model.z() * u
    }
}

impl<T: Real> LogDensity<T> for ConditionalTarget<'_, T> {
    fn dim(&self) -> usize {
        self.model.n_random()
    }

    fn log_density(&self, u: &DVector<T>) -> T {
        let eta = self.linear_predictor(u);
        let quad = u.dot(&(&self.g_inv * u));
        -(quad + self.log_det_g) * lit(0.5) + self.model.log_likelihood(&eta)
    }

    fn grad_log_density(&self, u: &DVector<T>) -> DVector<T> {
        let eta = self.linear_predictor(u);
        self.model.z().tr_mul(&self.model.score(&eta)) - &self.g_inv * u
    }

    fn log_density_and_grad(&self, u: &DVector<T>) -> (T, DVector<T>) {
        let eta = self.linear_predictor(u);
        let g_inv_u = &self.g_inv * u;
        let value = -(u.dot(&g_inv_u) + self.log_det_g) * lit(0.5) + self.model.log_likelihood(&eta);
        let grad = self.model.z().tr_mul(&self.model.score(&eta)) - g_inv_u;
        (value, grad)
    }
}

/// `log f(u | y)` up to an additive constant.
pub fn log_conditional_u<T: Real>(target: &ConditionalTarget<'_, T>, u: &DVector<T>) -> T {
    target.log_density(u)
}

/// `∇ᵤ log f(u | y)`.
pub fn grad_log_conditional_u<T: Real>(target: &ConditionalTarget<'_, T>, u: &DVector<T>) -> DVector<T> {
    target.grad_log_density(u)
}

/// Gaussian prior on `β` and independent Gamma(aⱼ, bⱼ) priors (rate form) on
/// the block precisions `λⱼ`.
#[derive(Debug, Clone)]
pub struct PriorSpec<T: Real> {
    pub mu0: DVector<T>,
    pub q: DMatrix<T>,
    /// `(aⱼ, bⱼ)` per random-effect block.
    pub gamma: Vec<(T, T)>,
}

impl<T: Real> PriorSpec<T> {
    /// Prior with `Q = scale · I`.
    pub fn isotropic(mu0: DVector<T>, scale: T, gamma: Vec<(T, T)>) -> Self {
        let p = mu0.len();
        Self {
            mu0,
            q: DMatrix::identity(p, p) * scale,
            gamma,
        }
    }

    /// Checks dimensions against `model` and that the prior is proper:
    /// `Q` positive definite and every `aⱼ, bⱼ > 0`.
    pub fn validate(&self, model: &ModelSpec<T>) -> Result<()> {
        let p = model.n_fixed();
        if self.mu0.len() != p || self.q.nrows() != p || self.q.ncols() != p {
            return Err(Error::Dimension(format!(
                "prior mean has length {} and Q is {}x{}; model has {p} fixed effects",
                self.mu0.len(),
                self.q.nrows(),
                self.q.ncols()
            )));
        }
        if self.gamma.len() != model.blocks().len() {
            return Err(Error::Dimension(format!(
                "{} gamma hyperparameter pairs for {} blocks",
                self.gamma.len(),
                model.blocks().len()
            )));
        }
        if let Some(j) = self.gamma.iter().position(|&(a, b)| !(a > T::zero() && b > T::zero())) {
            return Err(Error::Config(format!(
                "gamma prior for block {j} is improper; need a > 0 and b > 0"
            )));
        }
        if (&self.q - self.q.transpose()).amax() > lit::<T>(1e-12) * self.q.amax().max(T::one()) {
            return Err(Error::Config("prior precision Q must be symmetric".into()));
        }
        if p > 0 {
            linalg::cholesky(self.q.clone(), "prior precision Q (improper flat priors are not supported)")
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// State of a Bayesian chain.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesState<T: Real> {
    pub u: DVector<T>,
    pub beta: DVector<T>,
    pub lambda: DVector<T>,
}

impl<T: Real> BayesState<T> {
    /// `u = 0`, `β = 0`, `λ = 1`.
    pub fn initial(model: &ModelSpec<T>) -> Self {
        Self {
            u: DVector::zeros(model.n_random()),
            beta: DVector::zeros(model.n_fixed()),
            lambda: DVector::from_element(model.blocks().len(), T::one()),
        }
    }

    /// `ζ = (u, β)` stacked.
    pub fn zeta(&self) -> DVector<T> {
        let q = self.u.len();
        let mut z = DVector::zeros(q + self.beta.len());
        z.rows_mut(0, q).copy_from(&self.u);
        z.rows_mut(q, self.beta.len()).copy_from(&self.beta);
        z
    }

    pub fn set_zeta(&mut self, zeta: &DVector<T>) {
        let q = self.u.len();
        self.u.copy_from(&zeta.rows(0, q));
        let p = self.beta.len();
        self.beta.copy_from(&zeta.rows(q, p));
    }
}

/// `log f(u, β, λ | y)` up to an additive constant.
pub fn log_joint_bayes<T: Real>(model: &ModelSpec<T>, prior: &PriorSpec<T>, s: &BayesState<T>) -> Result<T> {
    if let Some(j) = s.lambda.iter().position(|&l| !(l > T::zero())) {
        return Err(Error::Domain(format!("λ[{j}] must be positive")));
    }
    let eta = model.linear_predictor(&s.beta, &s.u);
    let dev = &s.beta - &prior.mu0;
    let mut acc = model.log_likelihood(&eta) - dev.dot(&(&prior.q * &dev)) * lit(0.5);
    let ss = model.block_sums_of_squares(&s.u);
    for (j, &(a, b)) in prior.gamma.iter().enumerate() {
        let qj: T = from_usize(model.blocks()[j]);
        let l = s.lambda[j];
        acc += (a - T::one() + qj * lit(0.5)) * l.ln() - (b + ss[j] * lit(0.5)) * l;
    }
    Ok(acc)
}

/// `∇_ζ log f(ζ | λ, y)` with `ζ = (u, β)`, stacked in that order.
pub fn grad_log_joint_zeta<T: Real>(model: &ModelSpec<T>, prior: &PriorSpec<T>, s: &BayesState<T>) -> DVector<T> {
    let eta = model.linear_predictor(&s.beta, &s.u);
    zeta_gradient(model, prior, &s.lambda, &s.u, &s.beta, &model.score(&eta))
}

fn zeta_gradient<T: Real>(
    model: &ModelSpec<T>,
    prior: &PriorSpec<T>,
    lambda: &DVector<T>,
    u: &DVector<T>,
    beta: &DVector<T>,
    score: &DVector<T>,
) -> DVector<T> {
    let q = model.n_random();
    let p = model.n_fixed();
    let d = model.precision_diagonal(lambda);
    let gu = model.z().tr_mul(score) - d.component_mul(u);
    let gb = model.x().tr_mul(score) - &prior.q * (beta - &prior.mu0);
    let mut g = DVector::zeros(q + p);
    g.rows_mut(0, q).copy_from(&gu);
    g.rows_mut(q, p).copy_from(&gb);
    g
}

/// `f(ζ | λ, y)` for fixed `λ`, as a target over `ζ = (u, β)`.
#[derive(Debug, Clone)]
pub struct ZetaTarget<'a, T: Real> {
    model: &'a ModelSpec<T>,
    prior: &'a PriorSpec<T>,
    lambda: DVector<T>,
    precision_diag: DVector<T>,
}

impl<'a, T: Real> ZetaTarget<'a, T> {
    pub fn new(model: &'a ModelSpec<T>, prior: &'a PriorSpec<T>, lambda: DVector<T>) -> Self {
        let precision_diag = model.precision_diagonal(&lambda);
        Self {
            model,
            prior,
            lambda,
            precision_diag,
        }
    }

    pub fn lambda(&self) -> &DVector<T> {
        &self.lambda
    }

    fn split(&self, zeta: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let q = self.model.n_random();
        let p = self.model.n_fixed();
        assert_eq!(zeta.len(), p + q, "ζ has wrong length");
        (zeta.rows(0, q).into_owned(), zeta.rows(q, p).into_owned())
    }

    fn value(&self, u: &DVector<T>, beta: &DVector<T>, eta: &DVector<T>) -> T {
        let dev = beta - &self.prior.mu0;
        self.model.log_likelihood(eta)
            - (dev.dot(&(&self.prior.q * &dev)) + u.dot(&self.precision_diag.component_mul(u))) * lit(0.5)
    }
}

impl<T: Real> LogDensity<T> for ZetaTarget<'_, T> {
    fn dim(&self) -> usize {
        self.model.n_random() + self.model.n_fixed()
    }

    fn log_density(&self, zeta: &DVector<T>) -> T {
        let (u, beta) = self.split(zeta);
        let eta = self.model.linear_predictor(&beta, &u);
        self.value(&u, &beta, &eta)
    }

    fn grad_log_density(&self, zeta: &DVector<T>) -> DVector<T> {
        self.log_density_and_grad(zeta).1
    }

    fn log_density_and_grad(&self, zeta: &DVector<T>) -> (T, DVector<T>) {
        let (u, beta) = self.split(zeta);
        let eta = self.model.linear_predictor(&beta, &u);
        let score = self.model.score(&eta);
        (
            self.value(&u, &beta, &eta),
            zeta_gradient(self.model, self.prior, &self.lambda, &u, &beta, &score),
        )
    }
}
