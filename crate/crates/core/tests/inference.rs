mod common;

use common::{glm_newton, likelihood_fixture, mean, naive_log_lik, scalar_fixture};
use glmm_mcmc::chain::{run_chain, ConditionalChain, ConditionalSampler, RunSettings};
use glmm_mcmc::cli::dataset::{simulate, SimulationSpec};
use glmm_mcmc::conditional::MalaConfig;
use glmm_mcmc::diagnostics::batch_means_mcse;
use glmm_mcmc::inference::{mc_q_function, mcem_fit, mcml_fit, mcml_objective, FitConfig, ImportanceSample, MStep};
use glmm_mcmc::model::{ConditionalTarget, Family, ModelSpec};
use glmm_mcmc::RngStream;
use nalgebra::DVector;

fn draws(model: &ModelSpec<f64>, beta: &DVector<f64>, lambda: f64, sampler: ConditionalSampler<f64>, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let target = ConditionalTarget::from_precisions(model, beta.clone(), &DVector::from_element(1, lambda)).unwrap();
    let mut chain = ConditionalChain::new(target, &sampler, DVector::zeros(1)).unwrap();
    let settings = RunSettings { n_iter: n + n / 10, burn_in: n / 10, thin: 1, adapt: true };
    let out = run_chain(&mut chain, &mut RngStream::new(seed), &settings).unwrap();
    let u = out.group("u");
    u.row_iter().map(|r| r.transpose()).collect()
}

/// Per-draw complete-data log-likelihood, so the Monte Carlo error of the
/// Q-function can be estimated by batch means.
fn q_terms(model: &ModelSpec<f64>, draws: &[DVector<f64>], beta: &DVector<f64>, lambda: f64) -> Vec<f64> {
    let l = DVector::from_element(1, lambda);
    draws.iter().map(|u| mc_q_function(model, std::slice::from_ref(u), beta, &l)).collect()
}

fn mala() -> ConditionalSampler<f64> {
    ConditionalSampler::Mala(MalaConfig::new(0.8).unwrap())
}

#[test]
fn mcml_objective_is_zero_at_the_anchor() {
    let fx = likelihood_fixture();
    let model = fx.model();
    let beta = DVector::from_element(1, 0.4);
    let lambda = DVector::from_element(1, 0.7);
    let us = draws(&model, &beta, 0.7, mala(), 2000, 1);
    let sample = ImportanceSample::new(&model, &us, beta.clone(), lambda.clone()).unwrap();
    assert_eq!(mcml_objective(&sample, &beta, &lambda), 0.0);

    let mut cfg = FitConfig::new(mala(), 2000);
    cfg.max_iter = 0;
    let fit = mcml_fit(&mut RngStream::new(2), &model, &beta, &lambda, &cfg).unwrap();
    assert_eq!(fit.objective, 0.0);
    assert_eq!(fit.beta, beta);
    assert_eq!(fit.lambda, lambda);
}

#[test]
fn mcem_with_negligible_random_effects_recovers_the_glm() {
    let spec = SimulationSpec {
        family: Family::Logistic,
        m: 60,
        p: 2,
        intercept: true,
        blocks: vec![3],
        beta: vec![0.4, -0.8],
        lambda: vec![1e8],
        trials: 3,
    };
    let (data, _) = simulate(&mut RngStream::new(3), &spec).unwrap();
    let model = data.to_model(Family::Logistic).unwrap();
    let y: Vec<u64> = model.y_counts().to_vec();
    let trials: Vec<u64> = model.trial_counts().to_vec();
    let oracle = glm_newton(Family::Logistic, &y, &trials, model.x());

    let mut cfg = FitConfig::new(ConditionalSampler::LogisticPg, 500);
    cfg.fix_lambda = true;
    cfg.max_iter = 30;
    let fit = mcem_fit(&mut RngStream::new(4), &model, &DVector::zeros(2), &DVector::from_element(1, 1e8), &cfg).unwrap();
    assert!((&fit.beta - &oracle).amax() < 0.05, "{} vs {}", fit.beta, oracle);
    assert_eq!(fit.lambda[0], 1e8);
}

#[test]
fn q_function_profile_matches_quadrature() {
    let fx = likelihood_fixture();
    let model = fx.model();
    let (beta0, lambda0) = (0.5, 1.2);
    let beta = DVector::from_element(1, beta0);
    let us = draws(&model, &beta, lambda0, ConditionalSampler::LogisticPg, 50_000, 5);
    let base = q_terms(&model, &us, &beta, lambda0);

    // Posterior of u at (β0, λ0) on a grid.
    let log_complete = |b: f64, l: f64, u: f64| {
        let mut acc = 0.5 * l.ln() - 0.5 * l * u * u;
        for i in 0..4 {
            acc += naive_log_lik(Family::Logistic, fx.y[i] as f64, fx.trials[i] as f64, b + fx.z[i] * u);
        }
        acc
    };
    let (lo, hi, n) = (-15.0, 15.0, 30_001);
    let h = (hi - lo) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|k| lo + k as f64 * h).collect();
    let logs: Vec<f64> = grid.iter().map(|&u| log_complete(beta0, lambda0, u)).collect();
    let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
    let total: f64 = w.iter().sum();

    for (b, l) in [(0.0, 1.2), (1.0, 1.2), (0.5, 0.5), (0.8, 3.0)] {
        let exact: f64 = grid
            .iter()
            .zip(&w)
            .map(|(&u, wk)| wk * (log_complete(b, l, u) - log_complete(beta0, lambda0, u)))
            .sum::<f64>()
            / total;
        let terms = q_terms(&model, &us, &DVector::from_element(1, b), l);
        let diff: Vec<f64> = terms.iter().zip(&base).map(|(a, c)| a - c).collect();
        let se = batch_means_mcse(&diff).unwrap();
        assert!((mean(&diff) - exact).abs() < 3.0 * se, "({b}, {l}): {} vs {exact} (se {se})", mean(&diff));
    }
}

#[test]
fn one_em_step_from_the_mle_stays_put() {
    let fx = likelihood_fixture();
    let (b, l) = fx.mle();
    let model = fx.model();
    let mut cfg = FitConfig::new(mala(), 1_000_000);
    cfg.max_iter = 1;
    let fit = mcem_fit(&mut RngStream::new(6), &model, &DVector::from_element(1, b), &DVector::from_element(1, l), &cfg).unwrap();
    assert!((fit.beta[0] - b).abs() < 0.05, "beta {} vs {b}", fit.beta[0]);
    assert!((fit.lambda[0].ln() - l.ln()).abs() < 0.05, "lambda {} vs {l}", fit.lambda[0]);
}

#[test]
fn doubling_draws_shrinks_the_objective_error() {
    let fx = likelihood_fixture();
    let model = fx.model();
    let beta = DVector::from_element(1, 0.4);
    let lambda = DVector::from_element(1, 0.8);
    let (tb, tl) = (DVector::from_element(1, 0.6), DVector::from_element(1, 1.0));
    let se = |n: usize, seed: u64| {
        let us = draws(&model, &beta, 0.8, ConditionalSampler::LogisticPg, n, seed);
        let sample = ImportanceSample::new(&model, &us, beta.clone(), lambda.clone()).unwrap();
        let ratios: Vec<f64> = sample.log_ratios(&tb, &tl).iter().map(|r| r.exp()).collect();
        // Delta method for the log of the average ratio.
        batch_means_mcse(&ratios).unwrap() / mean(&ratios)
    };
    let ratio = se(100_000, 7) / se(200_000, 8);
    assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.15, "{ratio}");
}

#[test]
fn q_estimates_agree_across_samplers() {
    let fx = scalar_fixture(Family::Probit);
    let (model, beta) = fx.model();
    let lambda = 1.0 / fx.g;
    let a = draws(&model, &beta, lambda, mala(), 100_000, 9);
    let b = draws(&model, &beta, lambda, ConditionalSampler::ProbitDa, 100_000, 10);
    for (tb, tl) in [(1.0, lambda), (0.7, 1.3)] {
        let tb = DVector::from_element(1, tb);
        let qa = q_terms(&model, &a, &tb, tl);
        let qb = q_terms(&model, &b, &tb, tl);
        let se = (batch_means_mcse(&qa).unwrap().powi(2) + batch_means_mcse(&qb).unwrap().powi(2)).sqrt();
        assert!((mean(&qa) - mean(&qb)).abs() < 3.0 * se, "{} vs {}", mean(&qa), mean(&qb));
    }
}

#[test]
fn fits_are_reproducible() {
    let model = likelihood_fixture().model();
    let (b0, l0) = (DVector::from_element(1, 0.0), DVector::from_element(1, 1.0));
    let mut cfg = FitConfig::new(mala(), 2000);
    cfg.max_iter = 5;
    let em = |seed| mcem_fit(&mut RngStream::new(seed), &model, &b0, &l0, &cfg).unwrap().trajectory;
    assert_eq!(em(11), em(11));
    let ml = |seed| {
        let fit = mcml_fit(&mut RngStream::new(seed), &model, &b0, &l0, &cfg).unwrap();
        (fit.trajectory, fit.objective)
    };
    assert_eq!(ml(12), ml(12));
}

#[test]
fn newton_and_simplex_m_steps_agree() {
    let model = likelihood_fixture().model();
    let (b0, l0) = (DVector::from_element(1, 0.2), DVector::from_element(1, 0.6));
    let mut cfg = FitConfig::new(mala(), 5000);
    cfg.max_iter = 2;
    let simplex = mcem_fit(&mut RngStream::new(13), &model, &b0, &l0, &cfg).unwrap();
    cfg.m_step = MStep::Newton;
    let newton = mcem_fit(&mut RngStream::new(13), &model, &b0, &l0, &cfg).unwrap();
    for (a, b) in simplex.trajectory.iter().flatten().zip(newton.trajectory.iter().flatten()) {
        assert!((a - b).abs() < 1e-5, "{:?} vs {:?}", simplex.trajectory, newton.trajectory);
    }
    assert!((simplex.objective - newton.objective).abs() < 1e-6, "{} vs {}", simplex.objective, newton.objective);
}
