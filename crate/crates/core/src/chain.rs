//! Chain runner: burn-in with optional step-size adaptation, thinning, and
//! storage of post-burn-in draws.

use nalgebra::{DMatrix, DVector};

use crate::bayes::{
    hmc_within_gibbs_step, logistic_block_gibbs_step, logistic_full_gibbs_step, mala_within_gibbs_step,
    probit_block_gibbs_step, probit_full_gibbs_step, probit_haar_pxda_step, BayesModel,
};
use crate::conditional::{
    hmc_step, mala_step, HmcConfig, LogisticPgDa, MalaConfig, MassMatrix, ProbitDa, ProbitHaarPxda,
};
use crate::diagnostics::{StepSizeAdapter, HMC_TARGET_ACCEPT, MALA_TARGET_ACCEPT};
use crate::error::{Error, Result};
use crate::model::{BayesState, ConditionalTarget};
use crate::rng::RngStream;
use crate::scalar::{lit, to_f64, Real};

/// What one transition reports back to the runner.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepReport {
    pub accepted: Option<bool>,
    pub accept_prob: Option<f64>,
}

/// A Markov transition with a recordable state.
pub trait Transition {
    /// Column names of the recorded state.
    fn names(&self) -> Vec<String>;

    /// Current state in the order of [`Transition::names`].
    fn record(&self) -> Vec<f64>;

    fn advance(&mut self, rng: &mut RngStream) -> Result<StepReport>;

    /// Tunable step size, for kernels that have one.
    fn step_size(&self) -> Option<f64> {
        None
    }

    fn set_step_size(&mut self, _step_size: f64) {}

    /// Acceptance rate the step size is tuned toward.
    fn target_acceptance(&self) -> Option<f64> {
        None
    }
}

/// Iteration counts for [`run_chain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSettings {
    /// Total iterations `N`, burn-in included.
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Tune the step size during burn-in.
    pub adapt: bool,
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.n_iter <= self.burn_in {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.n_iter, self.burn_in
            )));
        }
        Ok(())
    }

    /// Number of stored rows, `⌊(N − B) / thin⌋`.
    pub fn n_stored(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Post-burn-in draws, one row per stored iteration.
#[derive(Debug, Clone)]
pub struct SampleMatrix {
    pub names: Vec<String>,
    pub data: DMatrix<f64>,
    pub seed: u64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Post-burn-in acceptance rate of Metropolis-type kernels.
    pub acceptance_rate: Option<f64>,
    /// Step size used after burn-in.
    pub step_size: Option<f64>,
}

impl SampleMatrix {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.data.column(j).iter().copied().collect())
    }

    /// Columns whose names start with `prefix.`.
    pub fn group(&self, prefix: &str) -> DMatrix<f64> {
        let idx: Vec<usize> = self
            .names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.split('.').next() == Some(prefix))
            .map(|(i, _)| i)
            .collect();
        self.data.select_columns(idx.iter())
    }
}

/// Runs `transition` for `settings.n_iter` iterations. During burn-in the
/// step size is tuned if requested; it is frozen afterwards and the runner
/// checks that it stays fixed.
pub fn run_chain<K: Transition + ?Sized>(
    transition: &mut K,
    rng: &mut RngStream,
    settings: &RunSettings,
) -> Result<SampleMatrix> {
    settings.validate()?;
    let names = transition.names();
    let d = names.len();
    let n_rows = settings.n_stored();
    let mut data = DMatrix::zeros(n_rows, d);
    let mut adapter = match (settings.adapt, transition.step_size(), transition.target_acceptance()) {
        (true, Some(eps), Some(target)) if settings.burn_in > 0 => Some(StepSizeAdapter::new(eps, target)),
        _ => None,
    };
    let mut accepted = 0usize;
    let mut counted = 0usize;
    let mut row = 0;
    let mut frozen_eps = None;
    for iter in 1..=settings.n_iter {
        let report = transition.advance(rng)?;
        if iter <= settings.burn_in {
            if let (Some(a), Some(p)) = (adapter.as_mut(), report.accept_prob) {
                let eps = a.update(p);
                transition.set_step_size(eps);
            }
            if iter == settings.burn_in {
                if let Some(a) = adapter.as_mut() {
                    a.freeze();
                }
            }
            continue;
        }
        if frozen_eps.is_none() {
            frozen_eps = Some(transition.step_size());
        }
        debug_assert_eq!(frozen_eps, Some(transition.step_size()), "step size changed after burn-in");
        if let Some(acc) = report.accepted {
            counted += 1;
            accepted += acc as usize;
        }
        if (iter - settings.burn_in).is_multiple_of(settings.thin) {
            let state = transition.record();
            for (j, v) in state.into_iter().enumerate() {
                data[(row, j)] = v;
            }
            row += 1;
        }
    }
    if frozen_eps.flatten() != transition.step_size() {
        return Err(Error::Config("step size changed after burn-in".into()));
    }
    debug_assert_eq!(row, n_rows);
    Ok(SampleMatrix {
        names,
        data,
        seed: rng.seed(),
        n_iter: settings.n_iter,
        burn_in: settings.burn_in,
        thin: settings.thin,
        acceptance_rate: (counted > 0).then(|| accepted as f64 / counted as f64),
        step_size: transition.step_size(),
    })
}

/// Kernel choice for the conditional target `f(u | β, G, y)`.
#[derive(Debug, Clone)]
pub enum ConditionalSampler<T: Real> {
    Mala(MalaConfig<T>),
    Hmc(HmcConfig<T>),
    ProbitDa,
    ProbitHaar,
    LogisticPg,
}

impl<T: Real> ConditionalSampler<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mala(_) => "mala",
            Self::Hmc(_) => "hmc",
            Self::ProbitDa => "da",
            Self::ProbitHaar => "pxda",
            Self::LogisticPg => "pgda",
        }
    }
}

#[derive(Debug, Clone)]
enum ConditionalKernel<T: Real> {
    Mala(MalaConfig<T>),
    Hmc(HmcConfig<T>),
    ProbitDa(ProbitDa<T>),
    ProbitHaar(ProbitHaarPxda<T>),
    LogisticPg(LogisticPgDa),
}

/// A chain on `u` targeting `f(u | β, G, y)`.
pub struct ConditionalChain<'a, T: Real> {
    target: ConditionalTarget<'a, T>,
    kernel: ConditionalKernel<T>,
    u: DVector<T>,
}

impl<'a, T: Real> ConditionalChain<'a, T> {
    pub fn new(target: ConditionalTarget<'a, T>, sampler: &ConditionalSampler<T>, u0: DVector<T>) -> Result<Self> {
        use crate::model::LogDensity;
        if u0.len() != target.dim() {
            return Err(Error::Dimension(format!(
                "initial u has length {}, expected {}",
                u0.len(),
                target.dim()
            )));
        }
        let kernel = match sampler {
            ConditionalSampler::Mala(c) => {
                c.validate()?;
                ConditionalKernel::Mala(*c)
            }
            ConditionalSampler::Hmc(c) => {
                c.validate()?;
                ConditionalKernel::Hmc(c.clone())
            }
            ConditionalSampler::ProbitDa => ConditionalKernel::ProbitDa(ProbitDa::new(&target)?),
            ConditionalSampler::ProbitHaar => ConditionalKernel::ProbitHaar(ProbitHaarPxda::new(&target)?),
            ConditionalSampler::LogisticPg => ConditionalKernel::LogisticPg(LogisticPgDa::new(&target)?),
        };
        Ok(Self { target, kernel, u: u0 })
    }

    pub fn state(&self) -> &DVector<T> {
        &self.u
    }

    pub fn target(&self) -> &ConditionalTarget<'a, T> {
        &self.target
    }
}

impl<T: Real> Transition for ConditionalChain<'_, T> {
    fn names(&self) -> Vec<String> {
        (1..=self.u.len()).map(|k| format!("u.{k}")).collect()
    }

    fn record(&self) -> Vec<f64> {
        self.u.iter().map(|&v| to_f64(v)).collect()
    }

    fn advance(&mut self, rng: &mut RngStream) -> Result<StepReport> {
        let t = &self.target;
        match &self.kernel {
            ConditionalKernel::Mala(c) => {
                let out = mala_step(rng, t, &self.u, c)?;
                self.u = out.state;
                Ok(StepReport {
                    accepted: Some(out.accepted),
                    accept_prob: Some(to_f64(out.accept_prob)),
                })
            }
            ConditionalKernel::Hmc(c) => {
                let out = hmc_step(rng, t, &self.u, c)?;
                self.u = out.state;
                Ok(StepReport {
                    accepted: Some(out.accepted),
                    accept_prob: Some(to_f64(out.accept_prob)),
                })
            }
            ConditionalKernel::ProbitDa(k) => {
                self.u = k.step(rng, t, &self.u)?;
                Ok(StepReport::default())
            }
            ConditionalKernel::ProbitHaar(k) => {
                self.u = k.step(rng, t, &self.u)?;
                Ok(StepReport::default())
            }
            ConditionalKernel::LogisticPg(k) => {
                self.u = k.step(rng, t, &self.u)?;
                Ok(StepReport::default())
            }
        }
    }

    fn step_size(&self) -> Option<f64> {
        match &self.kernel {
            ConditionalKernel::Mala(c) => Some(to_f64(c.step_size)),
            ConditionalKernel::Hmc(c) => Some(to_f64(c.step_size)),
            _ => None,
        }
    }

    fn set_step_size(&mut self, step_size: f64) {
        match &mut self.kernel {
            ConditionalKernel::Mala(c) => c.step_size = lit(step_size),
            ConditionalKernel::Hmc(c) => c.step_size = lit(step_size),
            _ => {}
        }
    }

    fn target_acceptance(&self) -> Option<f64> {
        match &self.kernel {
            ConditionalKernel::Mala(_) => Some(MALA_TARGET_ACCEPT),
            ConditionalKernel::Hmc(_) => Some(HMC_TARGET_ACCEPT),
            _ => None,
        }
    }
}

/// Kernel choice for the joint posterior.
#[derive(Debug, Clone)]
pub enum BayesSampler<T: Real> {
    MalaGibbs(MalaConfig<T>),
    HmcGibbs(HmcConfig<T>),
    ProbitFullGibbs,
    ProbitBlockGibbs,
    ProbitHaar,
    LogisticFullGibbs,
    LogisticBlockGibbs,
}

impl<T: Real> BayesSampler<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::MalaGibbs(_) => "mala-gibbs",
            Self::HmcGibbs(_) => "hmc-gibbs",
            Self::ProbitFullGibbs | Self::LogisticFullGibbs => "fg",
            Self::ProbitBlockGibbs | Self::LogisticBlockGibbs => "bg",
            Self::ProbitHaar => "haar",
        }
    }
}

/// A chain on `(u, β, λ)` targeting the joint posterior.
pub struct BayesChain<'a, T: Real> {
    model: BayesModel<'a, T>,
    sampler: BayesSampler<T>,
    state: BayesState<T>,
}

impl<'a, T: Real> BayesChain<'a, T> {
    pub fn new(model: BayesModel<'a, T>, sampler: BayesSampler<T>, init: BayesState<T>) -> Result<Self> {
        let spec = model.model();
        if init.u.len() != spec.n_random() || init.beta.len() != spec.n_fixed() || init.lambda.len() != spec.blocks().len() {
            return Err(Error::Dimension("initial state does not match the model".into()));
        }
        if let Some(j) = init.lambda.iter().position(|&l| !(l > T::zero())) {
            return Err(Error::Domain(format!("initial λ[{j}] must be positive")));
        }
        match &sampler {
            BayesSampler::MalaGibbs(c) => c.validate()?,
            BayesSampler::HmcGibbs(c) => {
                c.validate()?;
                if let MassMatrix::Diagonal(d) = &c.mass {
                    if d.len() != spec.n_fixed() + spec.n_random() {
                        return Err(Error::Dimension("mass matrix must have dimension p + q".into()));
                    }
                }
            }
            _ => {}
        }
        Ok(Self {
            model,
            sampler,
            state: init,
        })
    }

    pub fn state(&self) -> &BayesState<T> {
        &self.state
    }
}

impl<T: Real> Transition for BayesChain<'_, T> {
    fn names(&self) -> Vec<String> {
        let m = self.model.model();
        (1..=m.n_random())
            .map(|k| format!("u.{k}"))
            .chain((0..m.n_fixed()).map(|k| format!("beta.{k}")))
            .chain((1..=m.blocks().len()).map(|k| format!("lambda.{k}")))
            .collect()
    }

    fn record(&self) -> Vec<f64> {
        let s = &self.state;
        s.u.iter().chain(s.beta.iter()).chain(s.lambda.iter()).map(|&v| to_f64(v)).collect()
    }

    fn advance(&mut self, rng: &mut RngStream) -> Result<StepReport> {
        let (bm, s) = (&self.model, &self.state);
        let (next, report) = match &self.sampler {
            BayesSampler::MalaGibbs(c) => {
                let out = mala_within_gibbs_step(rng, bm, s, c)?;
                let r = StepReport {
                    accepted: out.accepted,
                    accept_prob: out.accept_prob.map(to_f64),
                };
                (out.state, r)
            }
            BayesSampler::HmcGibbs(c) => {
                let out = hmc_within_gibbs_step(rng, bm, s, c)?;
                let r = StepReport {
                    accepted: out.accepted,
                    accept_prob: out.accept_prob.map(to_f64),
                };
                (out.state, r)
            }
            BayesSampler::ProbitFullGibbs => (probit_full_gibbs_step(rng, bm, s)?, StepReport::default()),
            BayesSampler::ProbitBlockGibbs => (probit_block_gibbs_step(rng, bm, s)?, StepReport::default()),
            BayesSampler::ProbitHaar => (probit_haar_pxda_step(rng, bm, s)?, StepReport::default()),
            BayesSampler::LogisticFullGibbs => (logistic_full_gibbs_step(rng, bm, s)?, StepReport::default()),
            BayesSampler::LogisticBlockGibbs => (logistic_block_gibbs_step(rng, bm, s)?, StepReport::default()),
        };
        self.state = next;
        Ok(report)
    }

    fn step_size(&self) -> Option<f64> {
        match &self.sampler {
            BayesSampler::MalaGibbs(c) => Some(to_f64(c.step_size)),
            BayesSampler::HmcGibbs(c) => Some(to_f64(c.step_size)),
            _ => None,
        }
    }

    fn set_step_size(&mut self, step_size: f64) {
        match &mut self.sampler {
            BayesSampler::MalaGibbs(c) => c.step_size = lit(step_size),
            BayesSampler::HmcGibbs(c) => c.step_size = lit(step_size),
            _ => {}
        }
    }

    fn target_acceptance(&self) -> Option<f64> {
        match &self.sampler {
            BayesSampler::MalaGibbs(_) => Some(MALA_TARGET_ACCEPT),
            BayesSampler::HmcGibbs(_) => Some(HMC_TARGET_ACCEPT),
            _ => None,
        }
    }
}
