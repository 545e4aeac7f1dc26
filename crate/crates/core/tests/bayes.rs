mod common;

use common::{mean, variance, z_mean};
use glmm_mcmc::bayes::{lambda_gibbs, BayesModel};
use glmm_mcmc::chain::{run_chain, BayesChain, BayesSampler, RunSettings, SampleMatrix};
use glmm_mcmc::cli::dataset::{simulate, SimulationSpec};
use glmm_mcmc::conditional::{hmc_step, HmcConfig, MalaConfig, MassMatrix};
use glmm_mcmc::diagnostics::batch_means_mcse;
use glmm_mcmc::linalg::cholesky;
use glmm_mcmc::model::{BayesState, Family, ModelSpec, PriorSpec, ZetaTarget};
use glmm_mcmc::RngStream;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn run(model: &ModelSpec<f64>, prior: &PriorSpec<f64>, sampler: BayesSampler<f64>, n: usize, burn_in: usize, seed: u64) -> SampleMatrix {
    let bm = BayesModel::new(model, prior).unwrap();
    let mut chain = BayesChain::new(bm, sampler, BayesState::initial(model)).unwrap();
    let settings = RunSettings { n_iter: n + burn_in, burn_in, thin: 1, adapt: true };
    run_chain(&mut chain, &mut RngStream::new(seed), &settings).unwrap()
}

/// Simulated logistic data with m = 50, p = 2 (intercept and one covariate),
/// one block of q = 4 levels.
fn logistic_fixture() -> ModelSpec<f64> {
    let spec = SimulationSpec {
        family: Family::Logistic,
        m: 50,
        p: 2,
        intercept: true,
        blocks: vec![4],
        beta: vec![0.5, -0.5],
        lambda: vec![1.0],
        trials: 1,
    };
    let (data, _) = simulate(&mut RngStream::new(21), &spec).unwrap();
    data.to_model(Family::Logistic).unwrap()
}

fn no_data(family: Family, p: usize, blocks: Vec<usize>) -> ModelSpec<f64> {
    let q = blocks.iter().sum();
    ModelSpec::new(family, vec![], None, DMatrix::zeros(0, p), DMatrix::zeros(0, q), blocks).unwrap()
}

fn combined_z(a: &[f64], b: &[f64]) -> f64 {
    let se = (batch_means_mcse(a).unwrap().powi(2) + batch_means_mcse(b).unwrap().powi(2)).sqrt();
    (mean(a) - mean(b)).abs() / se
}

#[test]
fn lambda_conditional_examples() {
    let mut rng = RngStream::new(1);
    let n = 100_000;
    let prior = PriorSpec::isotropic(DVector::zeros(1), 1.0, vec![(1.0, 1.0)]);
    let xs: Vec<f64> = (0..n).map(|_| lambda_gibbs(&mut rng, &prior, &DVector::zeros(2), &[2]).unwrap()[0]).collect();
    assert!((mean(&xs) - 2.0).abs() < 0.02);

    // q = 12, a = b = 0.01 and uᵀu = 6 give Gamma(6.01, 3.01).
    let prior = PriorSpec::isotropic(DVector::zeros(1), 1.0, vec![(0.01, 0.01)]);
    let u = DVector::from_element(12, 0.5f64.sqrt());
    let xs: Vec<f64> = (0..n).map(|_| lambda_gibbs(&mut rng, &prior, &u, &[12]).unwrap()[0]).collect();
    assert!((mean(&xs) - 1.9967).abs() < 0.01);
}

#[test]
fn lambda_conditional_follows_block_order() {
    let n = 100_000;
    let u = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.3, 0.2]);
    let up = DVector::from_vec(vec![0.5, 0.3, 0.2, 1.0, -2.0]);
    let prior = PriorSpec::isotropic(DVector::zeros(1), 1.0, vec![(1.0, 2.0), (3.0, 0.5)]);
    let prior_p = PriorSpec::isotropic(DVector::zeros(1), 1.0, vec![(3.0, 0.5), (1.0, 2.0)]);
    let mut rng = RngStream::new(2);
    let a: Vec<DVector<f64>> = (0..n).map(|_| lambda_gibbs(&mut rng, &prior, &u, &[2, 3]).unwrap()).collect();
    let b: Vec<DVector<f64>> = (0..n).map(|_| lambda_gibbs(&mut rng, &prior_p, &up, &[3, 2]).unwrap()).collect();
    for (j, k) in [(0, 1), (1, 0)] {
        let xa: Vec<f64> = a.iter().map(|l| l[j]).collect();
        let xb: Vec<f64> = b.iter().map(|l| l[k]).collect();
        let se = ((variance(&xa) + variance(&xb)) / n as f64).sqrt();
        assert!((mean(&xa) - mean(&xb)).abs() < 3.0 * se);
    }
    // Exact means: (a + q/2) / (b + uᵀu/2).
    let xa: Vec<f64> = a.iter().map(|l| l[0]).collect();
    assert!((mean(&xa) - 2.0 / (2.0 + 2.5)).abs() < 3.0 * (variance(&xa) / n as f64).sqrt());
}

#[test]
fn tight_prior_pins_beta() {
    let model = logistic_fixture();
    let mu0 = DVector::from_vec(vec![0.3, -0.7]);
    let prior = PriorSpec::isotropic(mu0.clone(), 1e4, vec![(2.0, 1.0)]);
    let out = run(&model, &prior, BayesSampler::MalaGibbs(MalaConfig::new(0.05).unwrap()), 50_000, 10_000, 3);
    for k in 0..2 {
        let b = out.column(&format!("beta.{k}")).unwrap();
        assert!((mean(&b) - mu0[k]).abs() < 0.01, "beta.{k}: {}", mean(&b));
    }
}

#[test]
fn kernels_without_data_sample_the_prior() {
    let mu0 = DVector::from_vec(vec![1.0, -2.0]);
    let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let cov = q.clone().try_inverse().unwrap();
    let prior = PriorSpec { mu0: mu0.clone(), q, gamma: vec![(3.0, 2.0)] };
    let n = 100_000;
    let cases = [
        (Family::PoissonLog, BayesSampler::HmcGibbs(HmcConfig::new(0.3, 8, MassMatrix::Identity).unwrap())),
        (Family::Logistic, BayesSampler::MalaGibbs(MalaConfig::new(0.5).unwrap())),
        (Family::Probit, BayesSampler::ProbitFullGibbs),
        (Family::Logistic, BayesSampler::LogisticFullGibbs),
        (Family::Logistic, BayesSampler::LogisticBlockGibbs),
        (Family::Probit, BayesSampler::ProbitHaar),
    ];
    for (family, sampler) in cases {
        let name = sampler.name();
        let model = no_data(family, 2, vec![2]);
        let out = run(&model, &prior, sampler, n, 2000, 4);
        for k in 0..2 {
            let b = out.column(&format!("beta.{k}")).unwrap();
            assert!(z_mean(&b, mu0[k]) < 3.0, "{name} beta.{k} mean {}", mean(&b));
            let sq: Vec<f64> = b.iter().map(|x| (x - mu0[k]).powi(2)).collect();
            assert!(z_mean(&sq, cov[(k, k)]) < 3.0, "{name} beta.{k} variance");
        }
        // λ ~ Gamma(3, 2) and u | λ ~ N(0, 1/λ), so E[u²] = E[1/λ] = 2/(3 − 1).
        let l = out.column("lambda.1").unwrap();
        assert!(z_mean(&l, 1.5) < 3.0, "{name} lambda mean {}", mean(&l));
        let u = out.column("u.1").unwrap();
        assert!(z_mean(&u, 0.0) < 3.0, "{name} u mean");
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(z_mean(&sq, 1.0) < 3.0, "{name} u second moment {}", mean(&sq));
    }
}

#[test]
fn gradient_kernels_agree_with_block_gibbs() {
    let model = logistic_fixture();
    let prior = PriorSpec::isotropic(DVector::zeros(2), 0.01, vec![(2.0, 1.0)]);
    let reference = run(&model, &prior, BayesSampler::LogisticBlockGibbs, 100_000, 10_000, 5);
    let mala = run(&model, &prior, BayesSampler::MalaGibbs(MalaConfig::new(0.1).unwrap()), 300_000, 20_000, 6);
    let hmc = run(
        &model,
        &prior,
        BayesSampler::HmcGibbs(HmcConfig::new(0.1, 10, MassMatrix::Identity).unwrap()),
        100_000,
        10_000,
        7,
    );
    for other in [&mala, &hmc] {
        for name in ["beta.0", "beta.1", "lambda.1", "u.1"] {
            let (a, b) = (reference.column(name).unwrap(), other.column(name).unwrap());
            let z = combined_z(&a, &b);
            assert!(z < 3.0, "{name}: {} vs {} (z = {z:.2})", mean(&a), mean(&b));
        }
    }
}

#[test]
fn small_steps_conserve_energy_and_accept() {
    let model = logistic_fixture();
    let prior = PriorSpec::isotropic(DVector::zeros(2), 0.01, vec![(2.0, 1.0)]);
    let target = ZetaTarget::new(&model, &prior, DVector::from_element(1, 1.3));
    let cfg = HmcConfig::new(1e-3, 3, MassMatrix::Identity).unwrap();
    let mut rng = RngStream::new(8);
    let mut zeta = DVector::from_fn(6, |_, _| 0.3 * rng.random::<f64>());
    for _ in 0..200 {
        let out = hmc_step(&mut rng, &target, &zeta, &cfg).unwrap();
        assert!(out.energy_error.unwrap().abs() < 1e-5);
        zeta = out.state;
    }

    let bm = BayesModel::new(&model, &prior).unwrap();
    let mut s = BayesState::initial(&model);
    let cfg = MalaConfig::new(1e-6).unwrap();
    let mut accepted = 0;
    for _ in 0..2000 {
        let step = glmm_mcmc::bayes::mala_within_gibbs_step(&mut rng, &bm, &s, &cfg).unwrap();
        accepted += step.accepted.unwrap() as usize;
        s = step.state;
    }
    assert!(accepted >= 1995, "{accepted}");
}

#[test]
fn logistic_block_gibbs_stays_finite_over_a_long_run() {
    let model = logistic_fixture();
    let prior = PriorSpec::isotropic(DVector::zeros(2), 0.001, vec![(0.01, 0.01)]);
    let out = run(&model, &prior, BayesSampler::LogisticBlockGibbs, 1_000_000, 0, 9);
    assert!(out.data.iter().all(|v| v.is_finite()));
    assert!(out.column("lambda.1").unwrap().iter().all(|&l| l > 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conditional_precisions_are_positive_definite(l1 in 1e-6f64..1e6, l2 in 1e-6f64..1e6, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let m = 6;
        let x = DMatrix::from_fn(m, 2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() });
        let z = DMatrix::from_fn(m, 3, |i, j| if i % 3 == j { 1.0 } else { 0.0 });
        let model = ModelSpec::new(Family::Probit, vec![1, 0, 1, 1, 0, 0], None, x, z, vec![1, 2]).unwrap();
        let prior = PriorSpec::isotropic(DVector::zeros(2), 0.001, vec![(0.01, 0.01), (0.01, 0.01)]);
        let bm = BayesModel::new(&model, &prior).unwrap();
        let lambda = DVector::from_vec(vec![l1, l2]);
        let e = bm.augmented_design();
        let w = DVector::from_fn(m, |_, _| 0.05 + rng.random::<f64>());
        prop_assert!(cholesky(e.transpose() * e + bm.a_matrix(&lambda), "EᵀE + A").is_ok());
        prop_assert!(cholesky(glmm_mcmc::linalg::weighted_gram(e, &w) + bm.a_matrix(&lambda), "EᵀWE + A").is_ok());
    }
}
