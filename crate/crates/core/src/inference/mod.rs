//! Monte Carlo EM and Monte Carlo maximum likelihood for `(β, λ)`, where
//! `λⱼ` is the precision of random-effect block `j` (`G = ⊕ λⱼ⁻¹ I`).
//!
//! Both drivers draw `u` from the conditional `f(u | β, λ, y)` with any
//! [`ConditionalSampler`]. MCML searches over `(β, log λ)` by Nelder-Mead;
//! the MCEM Q-function separates, so its `λ` update is closed form and the
//! simplex runs over `β` only.

mod mcem;
mod mcml;
mod simplex;

pub use mcem::{mc_q_function, mcem_fit};
pub use mcml::{mcml_fit, mcml_objective, ImportanceSample};
pub use simplex::{minimize, Minimum, SimplexSettings};

use nalgebra::{DMatrix, DVector};

use crate::chain::{run_chain, ConditionalChain, ConditionalSampler, RunSettings, SampleMatrix, Transition};
use crate::error::{Error, Result};
use crate::model::{ConditionalTarget, ModelSpec};
use crate::rng::RngStream;
use crate::scalar::{from_usize, lit, to_f64, Real};

/// How the MCEM M-step maximizes the Q-function over `β`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MStep {
    /// Nelder-Mead with [`FitConfig::simplex`].
    #[default]
    Simplex,
    /// Newton-Raphson with step halving. The `β` part of the Q-function is
    /// concave for all three families, so this usually needs a handful of
    /// passes over the draws where the simplex needs hundreds.
    Newton,
}

/// Settings shared by [`mcem_fit`] and [`mcml_fit`].
#[derive(Debug, Clone)]
pub struct FitConfig<T: Real> {
    pub sampler: ConditionalSampler<T>,
    /// Stored draws `N` per E-step (MCEM) or per importance sample (MCML).
    pub n_samples: usize,
    /// Burn-in as a fraction of `N`.
    pub burn_in_fraction: f64,
    /// MCEM iterations; for MCML, zero skips the maximization.
    pub max_iter: usize,
    /// Max-norm change in `(β, log λ)` counted as converged.
    pub tol: f64,
    /// Consecutive converged iterations required to stop MCEM.
    pub stable_iterations: usize,
    /// Tune MALA/HMC step sizes during each burn-in.
    pub adapt: bool,
    /// Hold `λ` at its initial value.
    pub fix_lambda: bool,
    pub simplex: SimplexSettings,
    /// MCEM only; MCML always uses the simplex.
    pub m_step: MStep,
    /// MCML warns when the importance ESS falls below this fraction of `N`.
    pub ess_floor: f64,
    /// MCML re-anchoring rounds before the final one.
    pub pilot_rounds: usize,
}

impl<T: Real> FitConfig<T> {
    pub fn new(sampler: ConditionalSampler<T>, n_samples: usize) -> Self {
        Self {
            sampler,
            n_samples,
            burn_in_fraction: 0.1,
            max_iter: 100,
            tol: 1e-3,
            stable_iterations: 3,
            adapt: true,
            fix_lambda: false,
            simplex: SimplexSettings::default(),
            m_step: MStep::Simplex,
            ess_floor: 0.01,
            pilot_rounds: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::Config("fit needs at least one Monte Carlo draw".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("fit tolerance must be positive".into()));
        }
        if !(0.0..1.0e3).contains(&self.burn_in_fraction) {
            return Err(Error::Config("burn-in fraction must be nonnegative".into()));
        }
        if self.stable_iterations == 0 {
            return Err(Error::Config("stable_iterations must be at least 1".into()));
        }
        Ok(())
    }

    fn run_settings(&self) -> RunSettings {
        let burn_in = (self.burn_in_fraction * self.n_samples as f64).floor() as usize;
        RunSettings {
            n_iter: self.n_samples + burn_in,
            burn_in,
            thin: 1,
            adapt: self.adapt,
        }
    }
}

/// Estimates and the path that led to them.
#[derive(Debug, Clone)]
pub struct FitResult<T: Real> {
    pub beta: DVector<T>,
    pub lambda: DVector<T>,
    /// `(β, λ)` after each iteration (MCEM) or round (MCML), starting with the
    /// initial values.
    pub trajectory: Vec<Vec<f64>>,
    /// Final Monte Carlo objective: the Q-function (MCEM) or the log
    /// importance-ratio average (MCML).
    pub objective: f64,
    /// Importance-weight ESS at the MCML estimate.
    pub importance_ess: Option<f64>,
    pub warnings: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    /// Draws from the last E-step or importance sample.
    pub last_sample: Option<SampleMatrix>,
}

/// Monte Carlo draws of `u` with the products every objective evaluation
/// reuses: `Zuₙ` and the block sums of squares `uₙⱼᵀuₙⱼ`.
#[derive(Debug, Clone)]
pub(crate) struct DrawCache<T: Real> {
    /// `m × N`
    zu: DMatrix<T>,
    /// `r × N`
    ss: DMatrix<T>,
}

impl<T: Real> DrawCache<T> {
    pub(crate) fn new(model: &ModelSpec<T>, draws: &[DVector<T>]) -> Self {
        let n = draws.len();
        let mut zu = DMatrix::zeros(model.n_obs(), n);
        let mut ss = DMatrix::zeros(model.blocks().len(), n);
        for (k, u) in draws.iter().enumerate() {
            zu.set_column(k, &(model.z() * u));
            ss.set_column(k, &model.block_sums_of_squares(u));
        }
        Self { zu, ss }
    }

    pub(crate) fn len(&self) -> usize {
        self.zu.ncols()
    }

    /// Average of `uₙⱼᵀuₙⱼ` over the draws, per block.
    pub(crate) fn mean_sums_of_squares(&self) -> Vec<T> {
        let n = from_usize::<T>(self.len());
        self.ss.row_iter().map(|r| r.sum() / n).collect()
    }

    /// Gradient and negative Hessian in `β` of the draw-averaged
    /// log-likelihood `(1/N) Σₙ log f(y | β, uₙ)`.
    pub(crate) fn beta_derivatives(&self, model: &ModelSpec<T>, beta: &DVector<T>) -> (DVector<T>, DMatrix<T>) {
        let xb = model.x() * beta;
        let fam = model.family();
        let (y, l) = (model.y(), model.trials());
        let m = model.n_obs();
        let mut score = DVector::zeros(m);
        let mut weight = DVector::zeros(m);
        for k in 0..self.len() {
            for i in 0..m {
                let eta = xb[i] + self.zu[(i, k)];
                score[i] += fam.score(y[i], l[i], eta);
                weight[i] += fam.curvature(y[i], l[i], eta);
            }
        }
        let n = from_usize::<T>(self.len());
        score /= n;
        weight /= n;
        (model.x().tr_mul(&score), crate::linalg::weighted_gram(model.x(), &weight))
    }

    /// `log f(y, uₙ | β, λ)` for every draw, dropping constants.
    pub(crate) fn log_complete(&self, model: &ModelSpec<T>, beta: &DVector<T>, lambda: &DVector<T>) -> Vec<T> {
        let xb = model.x() * beta;
        let fam = model.family();
        let (y, l) = (model.y(), model.trials());
        let half = lit::<T>(0.5);
        let mut prior_const = T::zero();
        for (j, &qj) in model.blocks().iter().enumerate() {
            prior_const += from_usize::<T>(qj) * half * lambda[j].ln();
        }
        (0..self.len())
            .map(|k| {
                let mut acc = prior_const;
                for i in 0..model.n_obs() {
                    acc += fam.log_lik(y[i], l[i], xb[i] + self.zu[(i, k)]);
                }
                for j in 0..lambda.len() {
                    acc -= lambda[j] * self.ss[(j, k)] * half;
                }
                acc
            })
            .collect()
    }
}

fn check_start<T: Real>(model: &ModelSpec<T>, beta: &DVector<T>, lambda: &DVector<T>) -> Result<()> {
    if beta.len() != model.n_fixed() || lambda.len() != model.blocks().len() {
        return Err(Error::Dimension(format!(
            "start has {} fixed effects and {} precisions; model has {} and {}",
            beta.len(),
            lambda.len(),
            model.n_fixed(),
            model.blocks().len()
        )));
    }
    if let Some(j) = lambda.iter().position(|&l| !(l > T::zero()) || !l.is_finite()) {
        return Err(Error::Domain(format!("λ[{j}] must be positive and finite")));
    }
    Ok(())
}

/// Packs `(β, log λ)`; with `fix_lambda` only `β`.
fn pack<T: Real>(beta: &DVector<T>, lambda: &DVector<T>, fix_lambda: bool) -> Vec<f64> {
    let mut v: Vec<f64> = beta.iter().map(|&b| to_f64(b)).collect();
    if !fix_lambda {
        v.extend(lambda.iter().map(|&l| to_f64(l).ln()));
    }
    v
}

fn unpack<T: Real>(x: &[f64], p: usize, fixed_lambda: &DVector<T>, fix_lambda: bool) -> (DVector<T>, DVector<T>) {
    let beta = DVector::from_iterator(p, x[..p].iter().map(|&v| lit(v)));
    let lambda = if fix_lambda {
        fixed_lambda.clone()
    } else {
        DVector::from_iterator(fixed_lambda.len(), x[p..].iter().map(|&v| lit(v.exp())))
    };
    (beta, lambda)
}

fn trajectory_row<T: Real>(beta: &DVector<T>, lambda: &DVector<T>) -> Vec<f64> {
    beta.iter().chain(lambda.iter()).map(|&v| to_f64(v)).collect()
}

/// Runs the configured conditional sampler at `(β, λ)` from `u0`. Returns the
/// stored draws, the final state, and the adapted step size.
fn sample_conditional<T: Real>(
    rng: &mut RngStream,
    model: &ModelSpec<T>,
    beta: &DVector<T>,
    lambda: &DVector<T>,
    sampler: &ConditionalSampler<T>,
    u0: DVector<T>,
    settings: &RunSettings,
) -> Result<(Vec<DVector<T>>, SampleMatrix, DVector<T>, Option<f64>)> {
    let target = ConditionalTarget::from_precisions(model, beta.clone(), lambda)?;
    let mut chain = ConditionalChain::new(target, sampler, u0)?;
    let samples = run_chain(&mut chain, rng, settings)?;
    let q = model.n_random();
    let draws = (0..samples.data.nrows())
        .map(|r| DVector::from_iterator(q, samples.data.row(r).iter().map(|&v| lit(v))))
        .collect();
    let step = chain.step_size();
    Ok((draws, samples, chain.state().clone(), step))
}

fn with_step_size<T: Real>(sampler: &ConditionalSampler<T>, step: Option<f64>) -> ConditionalSampler<T> {
    let mut s = sampler.clone();
    if let Some(eps) = step {
        match &mut s {
            ConditionalSampler::Mala(c) => c.step_size = lit(eps),
            ConditionalSampler::Hmc(c) => c.step_size = lit(eps),
            _ => {}
        }
    }
    s
}
