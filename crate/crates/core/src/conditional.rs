//! One-step transition kernels for the random-effects conditional
//! `f(u | β, G, y)`.
//!
//! MALA and HMC work on any [`LogDensity`], which lets the Bayesian module
//! reuse them on `ζ = (u, β)`. The augmentation kernels are specific to the
//! probit and logistic conditional targets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Chol};
use crate::model::{ConditionalTarget, Family, LogDensity};
use crate::rng::{
    sample_log_concave, sample_polya_gamma, sample_precision_normal, sample_precision_normal_factored,
    sample_truncated_normal, standard_normal_vector, LogConcaveDensity, Side, Support,
};
use crate::scalar::{lit, to_f64, Real};

/// Step size for MALA; proposals are `N(u + ε∇/2, εI)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalaConfig<T: Real> {
    pub step_size: T,
}

impl<T: Real> MalaConfig<T> {
    pub fn new(step_size: T) -> Result<Self> {
        let cfg = Self { step_size };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > T::zero()) || !self.step_size.is_finite() {
            return Err(Error::Config(format!("MALA step size must be positive, got {}", self.step_size)));
        }
        Ok(())
    }
}

/// Mass matrix `M` of the HMC kinetic energy `ρᵀM⁻¹ρ/2`.
#[derive(Debug, Clone)]
pub enum MassMatrix<T: Real> {
    Identity,
    Diagonal(DVector<T>),
    Dense(Chol<T>),
}

impl<T: Real> MassMatrix<T> {
    pub fn diagonal(d: DVector<T>) -> Result<Self> {
        if d.iter().any(|&v| !(v > T::zero())) {
            return Err(Error::NotPositiveDefinite("diagonal mass matrix".into()));
        }
        Ok(Self::Diagonal(d))
    }

    pub fn dense(m: DMatrix<T>) -> Result<Self> {
        Ok(Self::Dense(linalg::cholesky(m, "mass matrix M")?))
    }

    /// `ρ ~ N(0, M)`.
    pub fn draw_momentum<R: Rng + ?Sized>(&self, rng: &mut R, d: usize) -> DVector<T> {
        let z = standard_normal_vector(rng, d);
        match self {
            Self::Identity => z,
            Self::Diagonal(m) => z.zip_map(m, |zi, mi| zi * mi.sqrt()),
            Self::Dense(c) => c.l_dirty().lower_triangle() * z,
        }
    }

    /// `M⁻¹ρ`.
    pub fn inverse_times(&self, rho: &DVector<T>) -> DVector<T> {
        match self {
            Self::Identity => rho.clone(),
            Self::Diagonal(m) => rho.component_div(m),
            Self::Dense(c) => c.solve(rho),
        }
    }

    /// `ρᵀM⁻¹ρ / 2`.
    pub fn kinetic(&self, rho: &DVector<T>) -> T {
        rho.dot(&self.inverse_times(rho)) * lit(0.5)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let md = match self {
            Self::Identity => return Ok(()),
            Self::Diagonal(m) => m.len(),
            Self::Dense(c) => c.l_dirty().nrows(),
        };
        if md != d {
            return Err(Error::Dimension(format!("mass matrix has dimension {md}, target has {d}")));
        }
        Ok(())
    }
}

/// Step size, leapfrog count and mass matrix for HMC.
#[derive(Debug, Clone)]
pub struct HmcConfig<T: Real> {
    pub step_size: T,
    pub n_leapfrog: usize,
    pub mass: MassMatrix<T>,
}

impl<T: Real> HmcConfig<T> {
    pub fn new(step_size: T, n_leapfrog: usize, mass: MassMatrix<T>) -> Result<Self> {
        let cfg = Self {
            step_size,
            n_leapfrog,
            mass,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > T::zero()) || !self.step_size.is_finite() {
            return Err(Error::Config(format!("HMC step size must be positive, got {}", self.step_size)));
        }
        if self.n_leapfrog == 0 {
            return Err(Error::Config("HMC needs at least one leapfrog step".into()));
        }
        Ok(())
    }
}

/// Result of one Metropolis-type transition.
#[derive(Debug, Clone)]
pub struct KernelOutcome<T: Real> {
    pub state: DVector<T>,
    pub accepted: bool,
    /// Acceptance probability `α ∈ [0, 1]`.
    pub accept_prob: T,
    /// `H(proposal) − H(current)` for HMC.
    pub energy_error: Option<T>,
    /// Final momentum for HMC, negated on acceptance.
    pub momentum: Option<DVector<T>>,
}

fn check_gradient<T: Real>(g: &DVector<T>) -> Result<()> {
    match g.iter().position(|v| !v.is_finite()) {
        Some(coordinate) => Err(Error::NonFiniteGradient { coordinate }),
        None => Ok(()),
    }
}

fn accept_prob_from_log<T: Real>(log_ratio: T) -> T {
    if to_f64(log_ratio).is_nan() {
        T::zero()
    } else if log_ratio >= T::zero() {
        T::one()
    } else {
        log_ratio.exp()
    }
}

fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    lit(rng.random::<f64>())
}

/// One MALA transition.
///
/// A non-finite gradient at the current state is an error. A proposal whose
/// log-density or gradient is not finite is rejected.
pub fn mala_step<T, D, R>(rng: &mut R, target: &D, u: &DVector<T>, cfg: &MalaConfig<T>) -> Result<KernelOutcome<T>>
where
    T: Real,
    D: LogDensity<T> + ?Sized,
    R: Rng + ?Sized,
{
    let noise = standard_normal_vector(rng, u.len());
    let v = uniform(rng);
    mala_step_with_noise(target, u, cfg, &noise, v)
}

/// MALA transition with the proposal noise `υ` and acceptance uniform given.
pub fn mala_step_with_noise<T, D>(
    target: &D,
    u: &DVector<T>,
    cfg: &MalaConfig<T>,
    noise: &DVector<T>,
    uniform: T,
) -> Result<KernelOutcome<T>>
where
    T: Real,
    D: LogDensity<T> + ?Sized,
{
    cfg.validate()?;
    if u.len() != target.dim() || noise.len() != target.dim() {
        return Err(Error::Dimension(format!(
            "state has length {}, noise {}, target dimension {}",
            u.len(),
            noise.len(),
            target.dim()
        )));
    }
    let eps = cfg.step_size;
    let half = lit::<T>(0.5);
    let (lf0, g0) = target.log_density_and_grad(u);
    check_gradient(&g0)?;
    let proposal = u + &g0 * (eps * half) + noise * eps.sqrt();
    let (lf1, g1) = target.log_density_and_grad(&proposal);
    let reject = |accept_prob: T| KernelOutcome {
        state: u.clone(),
        accepted: false,
        accept_prob,
        energy_error: None,
        momentum: None,
    };
    if !lf1.is_finite() || g1.iter().any(|v| !v.is_finite()) {
        return Ok(reject(T::zero()));
    }
    // log k(b | a) = −‖b − a − ε∇(a)/2‖² / (2ε)
    let fwd = (&proposal - u - &g0 * (eps * half)).norm_squared();
    let bwd = (u - &proposal - &g1 * (eps * half)).norm_squared();
    let log_ratio = lf1 - lf0 + (fwd - bwd) / (eps + eps);
    let alpha = accept_prob_from_log(log_ratio);
    if uniform < alpha {
        Ok(KernelOutcome {
            state: proposal,
            accepted: true,
            accept_prob: alpha,
            energy_error: None,
            momentum: None,
        })
    } else {
        Ok(reject(alpha))
    }
}

/// One leapfrog step: half kick, drift by `εM⁻¹ρ`, half kick.
pub fn leapfrog<T, D>(
    target: &D,
    u: &DVector<T>,
    rho: &DVector<T>,
    step_size: T,
    mass: &MassMatrix<T>,
) -> Result<(DVector<T>, DVector<T>)>
where
    T: Real,
    D: LogDensity<T> + ?Sized,
{
    let g = target.grad_log_density(u);
    check_gradient(&g)?;
    let t = leapfrog_steps_from(target, u, rho, g, step_size, 1, mass)?;
    Ok((t.position, t.momentum))
}

/// End point of a leapfrog trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    pub position: DVector<T>,
    pub momentum: DVector<T>,
    pub log_density: T,
    pub gradient: DVector<T>,
}

/// `n_steps` composed leapfrog steps, sharing gradient evaluations between
/// consecutive half kicks.
pub fn leapfrog_steps<T, D>(
    target: &D,
    u: &DVector<T>,
    rho: &DVector<T>,
    step_size: T,
    n_steps: usize,
    mass: &MassMatrix<T>,
) -> Result<Trajectory<T>>
where
    T: Real,
    D: LogDensity<T> + ?Sized,
{
    let g = target.grad_log_density(u);
    check_gradient(&g)?;
    leapfrog_steps_from(target, u, rho, g, step_size, n_steps, mass)
}

fn leapfrog_steps_from<T, D>(
    target: &D,
    u: &DVector<T>,
    rho: &DVector<T>,
    mut g: DVector<T>,
    step_size: T,
    n_steps: usize,
    mass: &MassMatrix<T>,
) -> Result<Trajectory<T>>
where
    T: Real,
    D: LogDensity<T> + ?Sized,
{
    if u.len() != target.dim() || rho.len() != target.dim() {
        return Err(Error::Dimension(format!(
            "position has length {}, momentum {}, target dimension {}",
            u.len(),
            rho.len(),
            target.dim()
        )));
    }
    mass.check_dim(u.len())?;
    let half = step_size * lit(0.5);
    let mut x = u.clone();
    let mut p = rho.clone();
    let mut lf = T::zero();
    for _ in 0..n_steps {
        p += &g * half;
        x += mass.inverse_times(&p) * step_size;
        let (l, g1) = target.log_density_and_grad(&x);
        check_gradient(&g1)?;
        lf = l;
        g = g1;
        p += &g * half;
    }
    if n_steps == 0 {
        lf = target.log_density(&x);
    }
    Ok(Trajectory {
        position: x,
        momentum: p,
        log_density: lf,
        gradient: g,
    })
}

/// One HMC transition.
///
/// A non-finite gradient at the current state is an error; a trajectory that
/// diverges to a non-finite gradient is rejected.
pub fn hmc_step<T, D, R>(rng: &mut R, target: &D, u: &DVector<T>, cfg: &HmcConfig<T>) -> Result<KernelOutcome<T>>
where
    T: Real,
    D: LogDensity<T> + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    cfg.mass.check_dim(target.dim())?;
    let rho = cfg.mass.draw_momentum(rng, target.dim());
    let (lf0, g0) = target.log_density_and_grad(u);
    check_gradient(&g0)?;
    let h0 = -lf0 + cfg.mass.kinetic(&rho);
    let v: T = uniform(rng);
    let reject = |energy_error: Option<T>| KernelOutcome {
        state: u.clone(),
        accepted: false,
        accept_prob: T::zero(),
        energy_error,
        momentum: Some(rho.clone()),
    };
    let traj = match leapfrog_steps_from(target, u, &rho, g0, cfg.step_size, cfg.n_leapfrog, &cfg.mass) {
        Ok(t) => t,
        Err(Error::NonFiniteGradient { .. }) => return Ok(reject(None)),
        Err(e) => return Err(e),
    };
    let h1 = -traj.log_density + cfg.mass.kinetic(&traj.momentum);
    let energy_error = h1 - h0;
    let alpha = accept_prob_from_log(-energy_error);
    if v < alpha {
        Ok(KernelOutcome {
            state: traj.position,
            accepted: true,
            accept_prob: alpha,
            energy_error: Some(energy_error),
            momentum: Some(-traj.momentum),
        })
    } else {
        let mut out = reject(Some(energy_error));
        out.accept_prob = alpha;
        Ok(out)
    }
}

fn require_binary_probit<T: Real>(target: &ConditionalTarget<'_, T>) -> Result<()> {
    let model = target.model();
    if model.family() != Family::Probit {
        return Err(Error::UnsupportedModel(format!(
            "probit data augmentation needs the probit family, got {}",
            model.family()
        )));
    }
    if !model.is_binary() {
        return Err(Error::UnsupportedModel(
            "probit data augmentation needs binary responses (all trials equal to 1)".into(),
        ));
    }
    Ok(())
}

/// Probit data-augmentation kernel with `S = ZᵀZ + G⁻¹` factored once.
#[derive(Debug, Clone)]
pub struct ProbitDa<T: Real> {
    chol: Chol<T>,
}

impl<T: Real> ProbitDa<T> {
    pub fn new(target: &ConditionalTarget<'_, T>) -> Result<Self> {
        require_binary_probit(target)?;
        let z = target.model().z();
        let s = z.tr_mul(z) + target.g_inv();
        Ok(Self {
            chol: linalg::cholesky(s, "ZᵀZ + G⁻¹")?,
        })
    }

    /// `vᵢ ~ TN(γᵢ, 1, yᵢ)`.
    pub fn draw_latent<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        target: &ConditionalTarget<'_, T>,
        u: &DVector<T>,
    ) -> Result<DVector<T>> {
        let eta = target.linear_predictor(u);
        let y = target.model().y_counts();
        let mut v = DVector::zeros(eta.len());
        for i in 0..eta.len() {
            v[i] = sample_truncated_normal(rng, eta[i], T::one(), Side::from_response(y[i] == 1))?;
        }
        Ok(v)
    }

    /// `u ~ N(S⁻¹Zᵀ(v − Xβ), S⁻¹)`.
    pub fn draw_u<R: Rng + ?Sized>(&self, rng: &mut R, target: &ConditionalTarget<'_, T>, v: &DVector<T>) -> DVector<T> {
        let t = target.model().z().tr_mul(&(v - target.offset()));
        sample_precision_normal_factored(rng, &self.chol, &t)
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        target: &ConditionalTarget<'_, T>,
        u: &DVector<T>,
    ) -> Result<DVector<T>> {
        let v = self.draw_latent(rng, target, u)?;
        Ok(self.draw_u(rng, target, &v))
    }
}

/// Probit Haar PX-DA kernel: a DA step with the latent vector rescaled by
/// `h ~ ω(h)` before the `u` draw.
#[derive(Debug, Clone)]
pub struct ProbitHaarPxda<T: Real> {
    da: ProbitDa<T>,
    // L⁻¹ZᵀXβ
    w_offset: DVector<T>,
}

impl<T: Real> ProbitHaarPxda<T> {
    pub fn new(target: &ConditionalTarget<'_, T>) -> Result<Self> {
        let da = ProbitDa::new(target)?;
        let w_offset = linalg::solve_lower(&da.chol, &target.model().z().tr_mul(target.offset()));
        Ok(Self { da, w_offset })
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        target: &ConditionalTarget<'_, T>,
        u: &DVector<T>,
    ) -> Result<DVector<T>> {
        self.step_with(rng, target, u, None)
    }

    /// As [`ProbitHaarPxda::step`]; `forced_scale` replaces the `h` draw.
    pub fn step_with<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        target: &ConditionalTarget<'_, T>,
        u: &DVector<T>,
        forced_scale: Option<T>,
    ) -> Result<DVector<T>> {
        let v = self.da.draw_latent(rng, target, u)?;
        let h = match forced_scale {
            Some(h) => h,
            None => {
                let (quad, lin) = self.scale_coefficients(target, &v);
                sample_scale(rng, v.len(), quad, lin)?
            }
        };
        Ok(self.da.draw_u(rng, target, &(v * h)))
    }

    /// `(vᵀZ₁v, vᵀZ₁Xβ)` with `Z₁ = I − Z(ZᵀZ + G⁻¹)⁻¹Zᵀ`.
    pub fn scale_coefficients(&self, target: &ConditionalTarget<'_, T>, v: &DVector<T>) -> (T, T) {
        let w = linalg::solve_lower(&self.da.chol, &target.model().z().tr_mul(v));
        (v.norm_squared() - w.norm_squared(), v.dot(target.offset()) - w.dot(&self.w_offset))
    }
}

/// Draws `h` from `ω(h) ∝ h^{m−1} exp(−(h²a − 2hb)/2)` on `(0, ∞)` by
/// adaptive rejection sampling. With no observations the move is the
/// identity and `h = 1`.
pub fn sample_scale<T: Real, R: Rng + ?Sized>(rng: &mut R, n_obs: usize, quad: T, lin: T) -> Result<T> {
    if n_obs == 0 {
        return Ok(T::one());
    }
    let (a, b) = (to_f64(quad), to_f64(lin));
    if !(a > 0.0) || !b.is_finite() {
        return Err(Error::Domain(format!(
            "scale density needs a positive quadratic coefficient, got a={a}, b={b}"
        )));
    }
    let k = (n_obs - 1) as f64;
    let mode = (b + (b * b + 4.0 * a * k).sqrt()) / (2.0 * a);
    let curvature = if mode > 0.0 { k / (mode * mode) + a } else { a };
    let sd = 1.0 / curvature.sqrt();
    let mode_hint = if mode > 0.0 { mode } else { sd };
    let density = LogConcaveDensity::new(
        Support::Positive,
        move |h: f64| k * h.ln() - 0.5 * a * h * h + b * h,
        move |h: f64| k / h - a * h + b,
    )
    .with_mode(mode_hint)
    .with_scale(sd);
    sample_log_concave(rng, &density).map(lit)
}

/// Logistic Pólya-Gamma data-augmentation kernel.
#[derive(Debug, Clone, Default)]
pub struct LogisticPgDa;

impl LogisticPgDa {
    pub fn new<T: Real>(target: &ConditionalTarget<'_, T>) -> Result<Self> {
        if target.model().family() != Family::Logistic {
            return Err(Error::UnsupportedModel(format!(
                "Pólya-Gamma augmentation needs the logistic family, got {}",
                target.model().family()
            )));
        }
        Ok(Self)
    }

    /// `wᵢ ~ PG(ℓᵢ, γᵢ)`.
    pub fn draw_latent<T: Real, R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        target: &ConditionalTarget<'_, T>,
        u: &DVector<T>,
    ) -> Result<DVector<T>> {
        draw_polya_gamma(rng, target.model().trial_counts(), &target.linear_predictor(u))
    }

    /// `u ~ N(S⁻¹Zᵀ(κ − WXβ), S⁻¹)` with `S = ZᵀWZ + G⁻¹`.
    pub fn draw_u<T: Real, R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        target: &ConditionalTarget<'_, T>,
        w: &DVector<T>,
    ) -> Result<DVector<T>> {
        let model = target.model();
        let z = model.z();
        let s = linalg::weighted_gram(z, w) + target.g_inv();
        let kappa = pg_kappa(model.y(), model.trials());
        let t = z.tr_mul(&(kappa - w.component_mul(target.offset())));
        sample_precision_normal(rng, &s, &t)
    }

    pub fn step<T: Real, R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        target: &ConditionalTarget<'_, T>,
        u: &DVector<T>,
    ) -> Result<DVector<T>> {
        let w = self.draw_latent(rng, target, u)?;
        self.draw_u(rng, target, &w)
    }
}

/// `κᵢ = yᵢ − ℓᵢ/2`.
pub(crate) fn pg_kappa<T: Real>(y: &DVector<T>, trials: &DVector<T>) -> DVector<T> {
    y - trials * lit::<T>(0.5)
}

pub(crate) fn draw_polya_gamma<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    trials: &[u64],
    eta: &DVector<T>,
) -> Result<DVector<T>> {
    let mut w = DVector::zeros(eta.len());
    for i in 0..eta.len() {
        w[i] = sample_polya_gamma(rng, trials[i], eta[i])?;
    }
    Ok(w)
}

/// One probit DA transition.
pub fn da_probit_step<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    target: &ConditionalTarget<'_, T>,
    u: &DVector<T>,
) -> Result<DVector<T>> {
    ProbitDa::new(target)?.step(rng, target, u)
}

/// One probit Haar PX-DA transition.
pub fn haar_pxda_probit_step<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    target: &ConditionalTarget<'_, T>,
    u: &DVector<T>,
) -> Result<DVector<T>> {
    ProbitHaarPxda::new(target)?.step(rng, target, u)
}

/// One logistic Pólya-Gamma DA transition.
pub fn pg_da_logistic_step<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    target: &ConditionalTarget<'_, T>,
    u: &DVector<T>,
) -> Result<DVector<T>> {
    LogisticPgDa::new(target)?.step(rng, target, u)
}
