use nalgebra::DVector;

use super::{
    check_start, pack, sample_conditional, trajectory_row, unpack, with_step_size, DrawCache, FitConfig, FitResult, MStep,
};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::RngStream;
use crate::scalar::{from_usize, lit, to_f64, Real};
use crate::inference::simplex::minimize;

/// Monte Carlo Q-function: the average of `log f(y, uₙ | β, λ)` over the
/// draws `uₙ`, up to an additive constant.
pub fn mc_q_function<T: Real>(model: &ModelSpec<T>, draws: &[DVector<T>], beta: &DVector<T>, lambda: &DVector<T>) -> f64 {
    let cache = DrawCache::new(model, draws);
    q_from_cache(&cache, model, beta, lambda)
}

fn q_from_cache<T: Real>(cache: &DrawCache<T>, model: &ModelSpec<T>, beta: &DVector<T>, lambda: &DVector<T>) -> f64 {
    let values = cache.log_complete(model, beta, lambda);
    let n = values.len() as f64;
    values.iter().map(|&v| to_f64(v)).sum::<f64>() / n
}

/// Monte Carlo EM from `(β, λ)`.
///
/// Each iteration runs the conditional sampler at the current iterate,
/// warm-started from the previous iteration's last `u` and step size, then
/// maximizes the Q-function: `λ` in closed form, `β` by the configured
/// [`MStep`]. Stops once the max-norm change
/// stays below `tol` for `stable_iterations` consecutive iterations.
pub fn mcem_fit<T: Real>(
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
    let mut sampler = cfg.sampler.clone();
    let mut trajectory = vec![trajectory_row(&beta, &lambda)];
    let mut stable = 0;
    let mut converged = false;
    let mut objective = f64::NAN;
    let mut last_sample = None;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let (draws, samples, u_last, step) =
            sample_conditional(rng, model, &beta, &lambda, &sampler, u.clone(), &settings)?;
        u = u_last;
        sampler = with_step_size(&sampler, step);
        let cache = DrawCache::new(model, &draws);
        last_sample = Some(samples);

        // The Q-function separates: the λ part is maximized in closed form,
        // λⱼ = qⱼ / mean ‖uₙⱼ‖², and the simplex searches over β alone.
        let new_lambda = if cfg.fix_lambda {
            lambda.clone()
        } else {
            let ss = cache.mean_sums_of_squares();
            let mut l = DVector::zeros(lambda.len());
            for (j, &qj) in model.blocks().iter().enumerate() {
                l[j] = from_usize::<T>(qj) / ss[j];
                if !(l[j].is_finite() && l[j] > T::zero()) {
                    return Err(Error::Optimizer {
                        message: format!("M-step of iteration {iterations}: draws of block {} have no spread", j + 1),
                        last_iterate: pack(&beta, &lambda, false),
                    });
                }
            }
            l
        };
        let x0 = pack(&beta, &lambda, cfg.fix_lambda);
        let (b, q) = match cfg.m_step {
            MStep::Simplex => {
                let neg_q = |x: &[f64]| {
                    let (b, _) = unpack(x, p, &new_lambda, true);
                    let q = q_from_cache(&cache, model, &b, &new_lambda);
                    if q.is_finite() {
                        -q
                    } else {
                        f64::INFINITY
                    }
                };
                let best = minimize(neg_q, &x0[..p], &cfg.simplex).map_err(|e| match e {
                    Error::Optimizer { message, last_iterate } => Error::Optimizer {
                        message: format!("M-step of iteration {iterations}: {message}"),
                        last_iterate,
                    },
                    other => other,
                })?;
                (unpack(&best.x, p, &new_lambda, true).0, -best.value)
            }
            MStep::Newton => newton_beta(&cache, model, &beta, &new_lambda).map_err(|message| Error::Optimizer {
                message: format!("M-step of iteration {iterations}: {message}"),
                last_iterate: x0.clone(),
            })?,
        };
        let x1 = pack(&b, &new_lambda, cfg.fix_lambda);
        let change = x0
            .iter()
            .zip(&x1)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        beta = b;
        lambda = new_lambda;
        objective = q;
        trajectory.push(trajectory_row(&beta, &lambda));

        stable = if change < cfg.tol { stable + 1 } else { 0 };
        if stable >= cfg.stable_iterations {
            converged = true;
            break;
        }
    }

    let mut warnings = Vec::new();
    if !converged && cfg.max_iter > 0 {
        warnings.push(format!("MCEM stopped after {iterations} iterations without meeting the tolerance"));
    }
    Ok(FitResult {
        beta,
        lambda,
        trajectory,
        objective,
        importance_ess: None,
        warnings,
        converged,
        iterations,
        last_sample,
    })
}

/// Maximizes the Q-function over `β` with `λ` held fixed. Newton steps are
/// halved until the objective does not decrease.
fn newton_beta<T: Real>(
    cache: &DrawCache<T>,
    model: &ModelSpec<T>,
    beta0: &DVector<T>,
    lambda: &DVector<T>,
) -> std::result::Result<(DVector<T>, f64), String> {
    let mut beta = beta0.clone();
    let mut q = q_from_cache(cache, model, &beta, lambda);
    if !q.is_finite() {
        return Err("Q-function is not finite at the current iterate".into());
    }
    for _ in 0..100 {
        let (grad, info) = cache.beta_derivatives(model, &beta);
        let chol = crate::linalg::cholesky(info, "Q-function information").map_err(|e| e.to_string())?;
        let step = chol.solve(&grad);
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * lit::<T>(t);
            let qc = q_from_cache(cache, model, &cand, lambda);
            if qc.is_finite() && qc >= q {
                beta = cand;
                q = qc;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return Ok((beta, q));
            }
        }
        if to_f64(step.amax()) * t < 1e-10 {
            return Ok((beta, q));
        }
    }
    Err("Newton iterations did not converge".into())
}
