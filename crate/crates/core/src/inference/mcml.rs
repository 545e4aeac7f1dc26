use nalgebra::DVector;

use super::{check_start, pack, sample_conditional, trajectory_row, unpack, DrawCache, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::inference::simplex::minimize;
use crate::model::ModelSpec;
use crate::rng::RngStream;
use crate::scalar::{to_f64, Real};

/// Draws from `f(u | y, β⁽⁰⁾, λ⁽⁰⁾)` together with their complete-data
/// log-densities at the anchor.
#[derive(Debug, Clone)]
pub struct ImportanceSample<'a, T: Real> {
    model: &'a ModelSpec<T>,
    cache: DrawCache<T>,
    beta0: DVector<T>,
    lambda0: DVector<T>,
    anchor_log: Vec<T>,
}

impl<'a, T: Real> ImportanceSample<'a, T> {
    pub fn new(model: &'a ModelSpec<T>, draws: &[DVector<T>], beta0: DVector<T>, lambda0: DVector<T>) -> Result<Self> {
        check_start(model, &beta0, &lambda0)?;
        if draws.is_empty() {
            return Err(Error::Config("importance sample needs at least one draw".into()));
        }
        if let Some(d) = draws.iter().find(|u| u.len() != model.n_random()) {
            return Err(Error::Dimension(format!(
                "draw has length {}, expected {}",
                d.len(),
                model.n_random()
            )));
        }
        let cache = DrawCache::new(model, draws);
        let anchor_log = cache.log_complete(model, &beta0, &lambda0);
        Ok(Self {
            model,
            cache,
            beta0,
            lambda0,
            anchor_log,
        })
    }

    pub fn len(&self) -> usize {
        self.anchor_log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_log.is_empty()
    }

    pub fn anchor(&self) -> (&DVector<T>, &DVector<T>) {
        (&self.beta0, &self.lambda0)
    }

    /// `log f(y, uₙ | β, λ) − log f(y, uₙ | β⁽⁰⁾, λ⁽⁰⁾)` per draw.
    pub fn log_ratios(&self, beta: &DVector<T>, lambda: &DVector<T>) -> Vec<f64> {
        self.cache
            .log_complete(self.model, beta, lambda)
            .iter()
            .zip(&self.anchor_log)
            .map(|(&a, &b)| to_f64(a - b))
            .collect()
    }

    /// Effective sample size `(Σw)² / Σw²` of the importance weights at `(β, λ)`.
    pub fn ess(&self, beta: &DVector<T>, lambda: &DVector<T>) -> f64 {
        let lr = self.log_ratios(beta, lambda);
        let m = lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return 0.0;
        }
        let (s1, s2) = lr.iter().fold((0.0, 0.0), |(s1, s2), &v| {
            let w = (v - m).exp();
            (s1 + w, s2 + w * w)
        });
        s1 * s1 / s2
    }
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln() - (v.len() as f64).ln()
}

/// Log of the importance-ratio average `(1/N) Σ f(y,uₙ|β,λ) / f(y,uₙ|β⁽⁰⁾,λ⁽⁰⁾)`.
/// The likelihood ratio to the anchor is estimated up to Monte Carlo error;
/// at the anchor itself every ratio is one and the value is exactly zero.
pub fn mcml_objective<T: Real>(sample: &ImportanceSample<'_, T>, beta: &DVector<T>, lambda: &DVector<T>) -> f64 {
    log_mean_exp(&sample.log_ratios(beta, lambda))
}

/// Monte Carlo maximum likelihood from the anchor `(β⁽⁰⁾, λ⁽⁰⁾)`.
///
/// Runs `pilot_rounds` rounds that each sample at the anchor, maximize, and
/// move the anchor to the estimate, then one final round. With
/// `max_iter == 0` no maximization happens and the anchor is returned with
/// objective 0.
pub fn mcml_fit<T: Real>(
    rng: &mut RngStream,
    model: &ModelSpec<T>,
    beta0: &DVector<T>,
    lambda0: &DVector<T>,
    cfg: &FitConfig<T>,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    check_start(model, beta0, lambda0)?;
    let settings = cfg.run_settings();
    let p = model.n_fixed();
    let mut beta = beta0.clone();
    let mut lambda = lambda0.clone();
    let mut u = DVector::zeros(model.n_random());
    let mut trajectory = vec![trajectory_row(&beta, &lambda)];
    let mut warnings = Vec::new();
    let mut last_sample = None;
    let mut objective = 0.0;
    let mut ess = None;
    let rounds = if cfg.max_iter == 0 { 1 } else { cfg.pilot_rounds + 1 };

    for round in 0..rounds {
        let (draws, samples, u_last, _) =
            sample_conditional(rng, model, &beta, &lambda, &cfg.sampler, u.clone(), &settings)?;
        u = u_last;
        last_sample = Some(samples);
        let sample = ImportanceSample::new(model, &draws, beta.clone(), lambda.clone())?;

        if cfg.max_iter > 0 {
            let x0 = pack(&beta, &lambda, cfg.fix_lambda);
            let anchor_lambda = lambda.clone();
            let neg = |x: &[f64]| {
                let (b, l) = unpack(x, p, &anchor_lambda, cfg.fix_lambda);
                let v = mcml_objective(&sample, &b, &l);
                if v.is_finite() {
                    -v
                } else {
                    f64::INFINITY
                }
            };
            let best = minimize(neg, &x0, &cfg.simplex).map_err(|e| match e {
                Error::Optimizer { message, last_iterate } => Error::Optimizer {
                    message: format!("MCML round {}: {message}", round + 1),
                    last_iterate,
                },
                other => other,
            })?;
            let (b, l) = unpack(&best.x, p, &lambda, cfg.fix_lambda);
            beta = b;
            lambda = l;
            trajectory.push(trajectory_row(&beta, &lambda));
        }
        objective = mcml_objective(&sample, &beta, &lambda);
        let e = sample.ess(&beta, &lambda);
        if e < cfg.ess_floor * sample.len() as f64 {
            warnings.push(format!(
                "round {}: importance ESS {:.1} is below {:.1}; consider more pilot rounds",
                round + 1,
                e,
                cfg.ess_floor * sample.len() as f64
            ));
        }
        ess = Some(e);
    }

    Ok(FitResult {
        beta,
        lambda,
        trajectory,
        objective,
        importance_ess: ess,
        warnings,
        converged: true,
        iterations: if cfg.max_iter == 0 { 0 } else { rounds },
        last_sample,
    })
}
