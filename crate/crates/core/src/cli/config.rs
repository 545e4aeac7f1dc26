//! Run configuration: a TOML file, `key=value` overrides, and the builders
//! that turn it into samplers, priors and initial states.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{BayesSampler, ConditionalSampler, RunSettings};
use crate::conditional::{HmcConfig, MalaConfig, MassMatrix};
use crate::error::{Error, Result};
use crate::inference::{FitConfig, MStep, SimplexSettings};
use crate::model::{BayesState, Family, ModelSpec, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerName {
    Mala,
    Hmc,
    Da,
    Pxda,
    Pgda,
    Fg,
    Bg,
    Haar,
    MalaGibbs,
    HmcGibbs,
}

impl SamplerName {
    /// Kernels that sample `u` with `(β, λ)` held fixed.
    pub fn is_conditional(self) -> bool {
        matches!(self, Self::Mala | Self::Hmc | Self::Da | Self::Pxda | Self::Pgda)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Mala => "mala",
            Self::Hmc => "hmc",
            Self::Da => "da",
            Self::Pxda => "pxda",
            Self::Pgda => "pgda",
            Self::Fg => "fg",
            Self::Bg => "bg",
            Self::Haar => "haar",
            Self::MalaGibbs => "mala-gibbs",
            Self::HmcGibbs => "hmc-gibbs",
        }
    }

    /// Rejects kernels that do not apply to the family.
    pub fn check_family(self, family: Family, binary: bool) -> Result<()> {
        let ok = match self {
            Self::Mala | Self::Hmc | Self::MalaGibbs | Self::HmcGibbs => true,
            Self::Da | Self::Pxda | Self::Haar => family == Family::Probit && binary,
            Self::Pgda => family == Family::Logistic,
            Self::Fg | Self::Bg => (family == Family::Probit && binary) || family == Family::Logistic,
        };
        if ok {
            return Ok(());
        }
        let need = match self {
            Self::Da | Self::Pxda | Self::Haar => "a probit model with binary responses",
            Self::Pgda => "the logistic family",
            _ => "a binary probit or a logistic model",
        };
        Err(Error::UnsupportedModel(format!(
            "sampler '{}' requires {need}; the configured family is {family}",
            self.label()
        )))
    }
}

fn default_chains() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: Family,
    #[serde(default)]
    pub sampler: Option<SamplerName>,
    #[serde(default)]
    pub seed: u64,
    /// Independent chains for `sample`, each on its own random stream.
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub tuning: TuningSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub summary: SummarySection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Total iterations, burn-in included.
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub adapt: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            burn_in: 1_000,
            thin: 1,
            adapt: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSection {
    pub step_size: f64,
    pub n_leapfrog: usize,
    /// Diagonal of the HMC mass matrix; identity when absent.
    pub mass: Option<Vec<f64>>,
}

impl Default for TuningSection {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            n_leapfrog: 10,
            mass: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    /// Prior mean of `β`; zeros when absent.
    pub mu0: Option<Vec<f64>>,
    /// `Q = q_scale · I` unless `q_matrix_file` is given.
    pub q_scale: f64,
    /// Whitespace- or comma-separated `p × p` precision matrix.
    pub q_matrix_file: Option<PathBuf>,
    /// Gamma shapes per block; a single value applies to every block.
    pub a: Vec<f64>,
    /// Gamma rates per block; a single value applies to every block.
    pub b: Vec<f64>,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            mu0: None,
            q_scale: 0.001,
            q_matrix_file: None,
            a: vec![0.01],
            b: vec![0.01],
        }
    }
}

/// Starting values. For conditional kernels `beta` and `lambda` are also the
/// fixed parameters of the target; for `fit` they are the start or anchor.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    pub beta: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub u: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Mcem,
    Mcml,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MStepName {
    Simplex,
    Newton,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub method: FitMethod,
    /// MCEM maximization over `β`.
    pub m_step: MStepName,
    pub n_samples: usize,
    pub burn_in_fraction: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub stable_iterations: usize,
    pub fix_lambda: bool,
    pub pilot_rounds: usize,
    pub ess_floor: f64,
    pub max_evals: usize,
    pub initial_step: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        let s = SimplexSettings::default();
        Self {
            method: FitMethod::Mcem,
            m_step: MStepName::Simplex,
            n_samples: 1_000,
            burn_in_fraction: 0.1,
            max_iter: 50,
            tol: 1e-3,
            stable_iterations: 3,
            fix_lambda: false,
            pilot_rounds: 0,
            ess_floor: 0.01,
            max_evals: s.max_evals,
            initial_step: s.initial_step,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub m: usize,
    /// Columns of X, the intercept included.
    pub p: usize,
    /// First column of X is all ones.
    pub intercept: bool,
    /// Levels per grouping factor.
    pub blocks: Vec<usize>,
    pub beta: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub trials: u64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            m: 100,
            p: 1,
            intercept: true,
            blocks: vec![10],
            beta: None,
            lambda: None,
            trials: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SummarySection {
    pub max_lag: usize,
}

impl Default for SummarySection {
    fn default() -> Self {
        Self { max_lag: 5 }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_override_value(value: &str) -> toml::Value {
    match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.to_string())),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Applies a dotted `key=value` override to a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key '{key}' is malformed")));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key '{key}': '{part}' is not a section")))?;
    }
    node.insert(path[path.len() - 1].to_string(), parse_override_value(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads an optional TOML file, applies overrides in order, then `seed`.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config '{}': {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("config '{}': {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if let Some(s) = seed {
            table.insert("seed".into(), toml::Value::Integer(s as i64));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        self.run_settings().validate()?;
        if !(self.tuning.step_size > 0.0) {
            return Err(Error::Config("tuning.step_size must be positive".into()));
        }
        if self.tuning.n_leapfrog == 0 {
            return Err(Error::Config("tuning.n_leapfrog must be at least 1".into()));
        }
        if self.summary.max_lag == 0 {
            return Err(Error::Config("summary.max_lag must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            n_iter: self.run.n_iter,
            burn_in: self.run.burn_in,
            thin: self.run.thin,
            adapt: self.run.adapt,
        }
    }

    pub fn sampler(&self) -> Result<SamplerName> {
        self.sampler
            .ok_or_else(|| Error::Config("no sampler configured (set `sampler`)".into()))
    }

    fn mass(&self, dim: usize) -> Result<MassMatrix<f64>> {
        match &self.tuning.mass {
            None => Ok(MassMatrix::Identity),
            Some(d) if d.len() == dim => MassMatrix::diagonal(DVector::from_vec(d.clone()))
                .map_err(|_| Error::Config("tuning.mass entries must be positive".into())),
            Some(d) => Err(Error::Config(format!(
                "tuning.mass has {} entries; the sampled state has dimension {dim}",
                d.len()
            ))),
        }
    }

    pub fn conditional_sampler(&self, model: &ModelSpec<f64>) -> Result<ConditionalSampler<f64>> {
        let name = self.sampler()?;
        name.check_family(model.family(), model.is_binary())?;
        let t = &self.tuning;
        Ok(match name {
            SamplerName::Mala => ConditionalSampler::Mala(MalaConfig::new(t.step_size)?),
            SamplerName::Hmc => {
                ConditionalSampler::Hmc(HmcConfig::new(t.step_size, t.n_leapfrog, self.mass(model.n_random())?)?)
            }
            SamplerName::Da => ConditionalSampler::ProbitDa,
            SamplerName::Pxda => ConditionalSampler::ProbitHaar,
            SamplerName::Pgda => ConditionalSampler::LogisticPg,
            other => {
                return Err(Error::Config(format!(
                    "sampler '{}' samples the joint posterior; use mala, hmc, da, pxda or pgda here",
                    other.label()
                )))
            }
        })
    }

    pub fn bayes_sampler(&self, model: &ModelSpec<f64>) -> Result<BayesSampler<f64>> {
        let name = self.sampler()?;
        name.check_family(model.family(), model.is_binary())?;
        let t = &self.tuning;
        let probit = model.family() == Family::Probit;
        Ok(match name {
            SamplerName::MalaGibbs => BayesSampler::MalaGibbs(MalaConfig::new(t.step_size)?),
            SamplerName::HmcGibbs => BayesSampler::HmcGibbs(HmcConfig::new(
                t.step_size,
                t.n_leapfrog,
                self.mass(model.n_random() + model.n_fixed())?,
            )?),
            SamplerName::Fg if probit => BayesSampler::ProbitFullGibbs,
            SamplerName::Fg => BayesSampler::LogisticFullGibbs,
            SamplerName::Bg if probit => BayesSampler::ProbitBlockGibbs,
            SamplerName::Bg => BayesSampler::LogisticBlockGibbs,
            SamplerName::Haar => BayesSampler::ProbitHaar,
            other => {
                return Err(Error::Config(format!(
                    "sampler '{}' samples u given (beta, lambda); it is not a posterior sampler",
                    other.label()
                )))
            }
        })
    }

    pub fn prior(&self, model: &ModelSpec<f64>) -> Result<PriorSpec<f64>> {
        let p = model.n_fixed();
        let r = model.blocks().len();
        let pr = &self.prior;
        let mu0 = match &pr.mu0 {
            Some(v) => sized("prior.mu0", v, p)?,
            None => DVector::zeros(p),
        };
        let q = match &pr.q_matrix_file {
            Some(path) => read_matrix(path, p)?,
            None => DMatrix::identity(p, p) * pr.q_scale,
        };
        let a = broadcast("prior.a", &pr.a, r)?;
        let b = broadcast("prior.b", &pr.b, r)?;
        let prior = PriorSpec {
            mu0,
            q,
            gamma: a.into_iter().zip(b).collect(),
        };
        prior.validate(model)?;
        Ok(prior)
    }

    pub fn init_beta(&self, p: usize) -> Result<DVector<f64>> {
        match &self.init.beta {
            Some(v) => sized("init.beta", v, p),
            None => Ok(DVector::zeros(p)),
        }
    }

    pub fn init_lambda(&self, r: usize) -> Result<DVector<f64>> {
        let l = match &self.init.lambda {
            Some(v) => DVector::from_vec(broadcast("init.lambda", v, r)?),
            None => DVector::from_element(r, 1.0),
        };
        if l.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("init.lambda entries must be positive and finite".into()));
        }
        Ok(l)
    }

    pub fn init_u(&self, q: usize) -> Result<DVector<f64>> {
        match &self.init.u {
            Some(v) => sized("init.u", v, q),
            None => Ok(DVector::zeros(q)),
        }
    }

    pub fn init_state(&self, model: &ModelSpec<f64>) -> Result<BayesState<f64>> {
        Ok(BayesState {
            u: self.init_u(model.n_random())?,
            beta: self.init_beta(model.n_fixed())?,
            lambda: self.init_lambda(model.blocks().len())?,
        })
    }

    pub fn fit_config(&self, model: &ModelSpec<f64>) -> Result<FitConfig<f64>> {
        let f = &self.fit;
        let mut cfg = FitConfig::new(self.conditional_sampler(model)?, f.n_samples);
        cfg.burn_in_fraction = f.burn_in_fraction;
        cfg.max_iter = f.max_iter;
        cfg.tol = f.tol;
        cfg.stable_iterations = f.stable_iterations;
        cfg.adapt = self.run.adapt;
        cfg.fix_lambda = f.fix_lambda;
        cfg.pilot_rounds = f.pilot_rounds;
        cfg.ess_floor = f.ess_floor;
        cfg.m_step = match f.m_step {
            MStepName::Simplex => MStep::Simplex,
            MStepName::Newton => MStep::Newton,
        };
        cfg.simplex = SimplexSettings {
            max_evals: f.max_evals,
            initial_step: f.initial_step,
            ..SimplexSettings::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sized(what: &str, v: &[f64], n: usize) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(Error::Config(format!("{what} has {} entries, expected {n}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn broadcast(what: &str, v: &[f64], n: usize) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; n]),
        k if k == n => Ok(v.to_vec()),
        k => Err(Error::Config(format!("{what} has {k} entries, expected 1 or {n}"))),
    }
}

fn read_matrix(path: &Path, p: usize) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read matrix '{}': {e}", path.display())))?;
    let mut values = Vec::new();
    let mut rows = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        rows += 1;
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            values.push(
                tok.parse::<f64>()
                    .map_err(|_| Error::Config(format!("matrix '{}': bad number '{tok}'", path.display())))?,
            );
        }
    }
    if rows != p || values.len() != p * p {
        return Err(Error::Config(format!(
            "matrix '{}' must be {p}x{p}, found {rows} rows and {} entries",
            path.display(),
            values.len()
        )));
    }
    Ok(DMatrix::from_row_slice(p, p, &values))
}
