//! Kernels for the joint posterior `f(u, β, λ | y)` under a Gaussian prior on
//! `β` and independent Gamma priors on the block precisions `λⱼ`.
//!
//! Each Gibbs kernel follows a fixed scan: which iterate (previous or
//! freshly drawn) feeds each conditional is documented per function.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::conditional::{draw_polya_gamma, hmc_step, mala_step, pg_kappa, sample_scale, HmcConfig, MalaConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, Chol};
use crate::model::{BayesState, Family, ModelSpec, PriorSpec, ZetaTarget};
use crate::rng::{sample_gamma, sample_precision_normal, sample_precision_normal_factored, sample_truncated_normal, Side};
use crate::scalar::{from_usize, lit, Real};

/// Model, prior, and the design products the Gibbs kernels reuse.
///
/// `η = (β, u)` is paired with `E = [X Z]`, `θ = (Qμ₀, 0)` and
/// `A(λ) = blockdiag(Q, D(λ))`.
#[derive(Debug, Clone)]
pub struct BayesModel<'a, T: Real> {
    model: &'a ModelSpec<T>,
    prior: &'a PriorSpec<T>,
    e: DMatrix<T>,
    ete: DMatrix<T>,
    theta: DVector<T>,
    q_mu0: DVector<T>,
    ztz: DMatrix<T>,
    xtx_q: Chol<T>,
}

impl<'a, T: Real> BayesModel<'a, T> {
    /// Validates the prior (proper, `Q` positive definite) against the model.
    pub fn new(model: &'a ModelSpec<T>, prior: &'a PriorSpec<T>) -> Result<Self> {
        prior.validate(model)?;
        let (m, p, q) = (model.n_obs(), model.n_fixed(), model.n_random());
        let mut e = DMatrix::zeros(m, p + q);
        e.columns_mut(0, p).copy_from(model.x());
        e.columns_mut(p, q).copy_from(model.z());
        let ete = e.tr_mul(&e);
        let q_mu0 = &prior.q * &prior.mu0;
        let mut theta = DVector::zeros(p + q);
        theta.rows_mut(0, p).copy_from(&q_mu0);
        let xtx_q = linalg::cholesky(model.x().tr_mul(model.x()) + &prior.q, "XᵀX + Q")?;
        Ok(Self {
            model,
            prior,
            ztz: model.z().tr_mul(model.z()),
            e,
            ete,
            theta,
            q_mu0,
            xtx_q,
        })
    }

    pub fn model(&self) -> &'a ModelSpec<T> {
        self.model
    }

    pub fn prior(&self) -> &'a PriorSpec<T> {
        self.prior
    }

    /// `E = [X Z]`.
    pub fn augmented_design(&self) -> &DMatrix<T> {
        &self.e
    }

    /// `θ = (Qμ₀, 0)`.
    pub fn theta(&self) -> &DVector<T> {
        &self.theta
    }

    /// `A(λ) = blockdiag(Q, D(λ))`.
    pub fn a_matrix(&self, lambda: &DVector<T>) -> DMatrix<T> {
        let p = self.model.n_fixed();
        let q = self.model.n_random();
        let mut a = DMatrix::zeros(p + q, p + q);
        a.view_mut((0, 0), (p, p)).copy_from(&self.prior.q);
        let d = self.model.precision_diagonal(lambda);
        for k in 0..q {
            a[(p + k, p + k)] = d[k];
        }
        a
    }

    fn eta(s: &BayesState<T>) -> DVector<T> {
        let p = s.beta.len();
        let q = s.u.len();
        let mut eta = DVector::zeros(p + q);
        eta.rows_mut(0, p).copy_from(&s.beta);
        eta.rows_mut(p, q).copy_from(&s.u);
        eta
    }

    fn split_eta(&self, eta: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let p = self.model.n_fixed();
        let q = self.model.n_random();
        (eta.rows(0, p).into_owned(), eta.rows(p, q).into_owned())
    }

    fn require_binary_probit(&self) -> Result<()> {
        if self.model.family() != Family::Probit || !self.model.is_binary() {
            return Err(Error::UnsupportedModel(
                "probit Gibbs kernels need the probit family with binary responses".into(),
            ));
        }
        Ok(())
    }

    fn require_logistic(&self) -> Result<()> {
        if self.model.family() != Family::Logistic {
            return Err(Error::UnsupportedModel(format!(
                "logistic Gibbs kernels need the logistic family, got {}",
                self.model.family()
            )));
        }
        Ok(())
    }

    fn probit_latent<R: Rng + ?Sized>(&self, rng: &mut R, s: &BayesState<T>) -> Result<DVector<T>> {
        let gamma = self.model.linear_predictor(&s.beta, &s.u);
        let y = self.model.y_counts();
        let mut v = DVector::zeros(gamma.len());
        for i in 0..gamma.len() {
            v[i] = sample_truncated_normal(rng, gamma[i], T::one(), Side::from_response(y[i] == 1))?;
        }
        Ok(v)
    }
}

/// Result of one Bayesian transition.
#[derive(Debug, Clone)]
pub struct BayesStep<T: Real> {
    pub state: BayesState<T>,
    /// Set by the Metropolis-within-Gibbs kernels.
    pub accepted: Option<bool>,
    pub accept_prob: Option<T>,
}

/// `λⱼ ~ Gamma(aⱼ + qⱼ/2, bⱼ + uⱼᵀuⱼ/2)` independently per block.
pub fn lambda_gibbs<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    prior: &PriorSpec<T>,
    u: &DVector<T>,
    blocks: &[usize],
) -> Result<DVector<T>> {
    if prior.gamma.len() != blocks.len() || blocks.iter().sum::<usize>() != u.len() {
        return Err(Error::Dimension(format!(
            "{} gamma priors, blocks {blocks:?}, u of length {}",
            prior.gamma.len(),
            u.len()
        )));
    }
    let mut lambda = DVector::zeros(blocks.len());
    let mut start = 0;
    for (j, (&qj, &(a, b))) in blocks.iter().zip(&prior.gamma).enumerate() {
        let ss = u.rows(start, qj).norm_squared();
        start += qj;
        let half = lit::<T>(0.5);
        lambda[j] = sample_gamma(rng, a + from_usize::<T>(qj) * half, b + ss * half)?;
    }
    Ok(lambda)
}

/// MALA on `ζ = (u, β)` given `λ`, then `λ` from the new `u`.
pub fn mala_within_gibbs_step<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    bm: &BayesModel<'_, T>,
    s: &BayesState<T>,
    cfg: &MalaConfig<T>,
) -> Result<BayesStep<T>> {
    let target = ZetaTarget::new(bm.model, bm.prior, s.lambda.clone());
    let out = mala_step(rng, &target, &s.zeta(), cfg)?;
    let mut next = s.clone();
    next.set_zeta(&out.state);
    next.lambda = lambda_gibbs(rng, bm.prior, &next.u, bm.model.blocks())?;
    Ok(BayesStep {
        state: next,
        accepted: Some(out.accepted),
        accept_prob: Some(out.accept_prob),
    })
}

/// HMC on `ζ = (u, β)` given `λ`, then `λ` from the new `u`.
pub fn hmc_within_gibbs_step<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    bm: &BayesModel<'_, T>,
    s: &BayesState<T>,
    cfg: &HmcConfig<T>,
) -> Result<BayesStep<T>> {
    let target = ZetaTarget::new(bm.model, bm.prior, s.lambda.clone());
    let out = hmc_step(rng, &target, &s.zeta(), cfg)?;
    let mut next = s.clone();
    next.set_zeta(&out.state);
    next.lambda = lambda_gibbs(rng, bm.prior, &next.u, bm.model.blocks())?;
    Ok(BayesStep {
        state: next,
        accepted: Some(out.accepted),
        accept_prob: Some(out.accept_prob),
    })
}

/// Probit full Gibbs scan:
/// 1. `λ` given the previous `u`;
/// 2. `v` given the previous `(u, β)`;
/// 3. `u ~ N((ZᵀZ + D(λ))⁻¹Zᵀ(v − Xβ), (ZᵀZ + D(λ))⁻¹)` with the new `λ` and previous `β`;
/// 4. `β ~ N((XᵀX + Q)⁻¹(Xᵀv + Qμ₀ − XᵀZu), (XᵀX + Q)⁻¹)` with the new `u`.
pub fn probit_full_gibbs_step<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    bm: &BayesModel<'_, T>,
    s: &BayesState<T>,
) -> Result<BayesState<T>> {
    bm.require_binary_probit()?;
    let model = bm.model;
    let lambda = lambda_gibbs(rng, bm.prior, &s.u, model.blocks())?;
    let v = bm.probit_latent(rng, s)?;
    let mut su = bm.ztz.clone();
    su.set_diagonal(&(su.diagonal() + model.precision_diagonal(&lambda)));
    let tu = model.z().tr_mul(&(&v - model.x() * &s.beta));
    let u = sample_precision_normal(rng, &su, &tu)?;
    let tb = model.x().tr_mul(&(&v - model.z() * &u)) + &bm.q_mu0;
    let beta = sample_precision_normal_factored(rng, &bm.xtx_q, &tb);
    Ok(BayesState { u, beta, lambda })
}

/// Probit two-block Gibbs: `λ` and `v` given the previous `η = (β, u)`,
/// drawn independently, then `η ~ N((EᵀE + A(λ))⁻¹(Eᵀv + θ), (EᵀE + A(λ))⁻¹)`.
pub fn probit_block_gibbs_step<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    bm: &BayesModel<'_, T>,
    s: &BayesState<T>,
) -> Result<BayesState<T>> {
    probit_haar_pxda_step_with(rng, bm, s, Some(T::one()))
}

/// Probit Haar PX-DA: the two-block scan with `v` replaced by `hv`,
/// `h ~ ω*(h) ∝ h^{m−1} exp(−(h²vᵀE₁v − 2hvᵀE₂)/2)`, before the `η` draw.
pub fn probit_haar_pxda_step<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    bm: &BayesModel<'_, T>,
    s: &BayesState<T>,
) -> Result<BayesState<T>> {
    probit_haar_pxda_step_with(rng, bm, s, None)
}

/// As [`probit_haar_pxda_step`]; `forced_scale = Some(1)` is the two-block
/// Gibbs step.
pub fn probit_haar_pxda_step_with<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    bm: &BayesModel<'_, T>,
    s: &BayesState<T>,
    forced_scale: Option<T>,
) -> Result<BayesState<T>> {
    bm.require_binary_probit()?;
    let lambda = lambda_gibbs(rng, bm.prior, &s.u, bm.model.blocks())?;
    let v = bm.probit_latent(rng, s)?;
    let chol = linalg::cholesky(&bm.ete + bm.a_matrix(&lambda), "EᵀE + A(λ)")?;
    let etv = bm.e.tr_mul(&v);
    let h = match forced_scale {
        Some(h) => h,
        None => {
            // vᵀE₁v = vᵀv − ‖L⁻¹Eᵀv‖², vᵀE₂ = (L⁻¹Eᵀv)ᵀ(L⁻¹θ)
            let w = linalg::solve_lower(&chol, &etv);
            let quad = v.norm_squared() - w.norm_squared();
            let lin = w.dot(&linalg::solve_lower(&chol, &bm.theta));
            sample_scale(rng, v.len(), quad, lin)?
        }
    };
    let t = etv * h + &bm.theta;
    let eta = sample_precision_normal_factored(rng, &chol, &t);
    let (beta, u) = bm.split_eta(&eta);
    Ok(BayesState { u, beta, lambda })
}

/// Logistic full Gibbs scan:
/// 1. `λ` given the previous `u`;
/// 2. `wᵢ ~ PG(ℓᵢ, γᵢ)` at the previous `(u, β)`;
/// 3. `u ~ N((ZᵀWZ + D(λ))⁻¹Zᵀ(κ − WXβ), ·)` with the new `λ, w` and previous `β`;
/// 4. `β ~ N((XᵀWX + Q)⁻¹(Xᵀκ + Qμ₀ − XᵀWZu), (XᵀWX + Q)⁻¹)` with the new `w, u`.
pub fn logistic_full_gibbs_step<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    bm: &BayesModel<'_, T>,
    s: &BayesState<T>,
) -> Result<BayesState<T>> {
    bm.require_logistic()?;
    let model = bm.model;
    let lambda = lambda_gibbs(rng, bm.prior, &s.u, model.blocks())?;
    let gamma = model.linear_predictor(&s.beta, &s.u);
    let w = draw_polya_gamma(rng, model.trial_counts(), &gamma)?;
    let kappa = pg_kappa(model.y(), model.trials());

    let mut su = linalg::weighted_gram(model.z(), &w);
    su.set_diagonal(&(su.diagonal() + model.precision_diagonal(&lambda)));
    let tu = model.z().tr_mul(&(&kappa - w.component_mul(&(model.x() * &s.beta))));
    let u = sample_precision_normal(rng, &su, &tu)?;

    let sb = linalg::weighted_gram(model.x(), &w) + &bm.prior.q;
    let tb = model.x().tr_mul(&(&kappa - w.component_mul(&(model.z() * &u)))) + &bm.q_mu0;
    let beta = sample_precision_normal(rng, &sb, &tb)?;
    Ok(BayesState { u, beta, lambda })
}

/// Logistic block Gibbs: `λ` and `w` given the previous `η`, then
/// `η ~ N((EᵀWE + A(λ))⁻¹(Eᵀκ + θ), (EᵀWE + A(λ))⁻¹)`.
pub fn logistic_block_gibbs_step<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    bm: &BayesModel<'_, T>,
    s: &BayesState<T>,
) -> Result<BayesState<T>> {
    bm.require_logistic()?;
    let model = bm.model;
    let lambda = lambda_gibbs(rng, bm.prior, &s.u, model.blocks())?;
    let gamma = &bm.e * BayesModel::eta(s);
    let w = draw_polya_gamma(rng, model.trial_counts(), &gamma)?;
    let kappa = pg_kappa(model.y(), model.trials());
    let prec = linalg::weighted_gram(&bm.e, &w) + bm.a_matrix(&lambda);
    let t = bm.e.tr_mul(&kappa) + &bm.theta;
    let eta = sample_precision_normal(rng, &prec, &t)?;
    let (beta, u) = bm.split_eta(&eta);
    Ok(BayesState { u, beta, lambda })
}
