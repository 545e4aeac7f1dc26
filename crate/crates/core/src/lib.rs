//! MCMC kernels, likelihood drivers and chain diagnostics for generalized
//! linear mixed models with logistic, probit and Poisson-log links.
//!
//! The numerical core is generic over the scalar type ([`scalar::Real`], implemented
//! for `f32` and `f64`). The aliases below fix it to one precision.

pub mod bayes;
pub mod chain;
pub mod cli;
pub mod conditional;
pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use model::Family;
pub use rng::RngStream;
pub use scalar::Real;

pub type ModelSpec64 = model::ModelSpec<f64>;
pub type ModelSpec32 = model::ModelSpec<f32>;
pub type ConditionalTarget64<'a> = model::ConditionalTarget<'a, f64>;
pub type ConditionalTarget32<'a> = model::ConditionalTarget<'a, f32>;
pub type PriorSpec64 = model::PriorSpec<f64>;
pub type PriorSpec32 = model::PriorSpec<f32>;
pub type BayesState64 = model::BayesState<f64>;
pub type BayesState32 = model::BayesState<f32>;
pub type BayesModel64<'a> = bayes::BayesModel<'a, f64>;
pub type BayesModel32<'a> = bayes::BayesModel<'a, f32>;
pub type ConditionalSampler64 = chain::ConditionalSampler<f64>;
pub type ConditionalSampler32 = chain::ConditionalSampler<f32>;
pub type BayesSampler64 = chain::BayesSampler<f64>;
pub type BayesSampler32 = chain::BayesSampler<f32>;
pub type FitConfig64 = inference::FitConfig<f64>;
pub type FitConfig32 = inference::FitConfig<f32>;
pub type FitResult64 = inference::FitResult<f64>;
pub type FitResult32 = inference::FitResult<f32>;
