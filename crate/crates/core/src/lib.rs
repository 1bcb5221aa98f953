//! Hierarchical model for first-arrival dates of migratory species.
//!
//! The model fuses four response tables aggregated to a pixel grid:
//! standardised survey-route counts, checklist counts, per-checklist
//! presence counts, and transformed first-arrival days. Four spatial
//! Gaussian fields and one temporal field, approximated with Vecchia
//! factorisations, link the tables; a saturating function transfers the
//! sampling effort into the location of a generalised extreme-value (GEV)
//! distribution for arrivals, which allows predictions under infinite
//! effort.
//!
//! Module map:
//!
//! - [`grid`]: pixel grid, CSV ingestion, aggregation into response tables
//! - [`dist`]: GEV, date transform, count log-likelihoods
//! - [`vecchia`]: exponential covariance, ordering, sparse factor, PC priors
//! - [`model`]: latent state, predictors, joint log-posterior and gradients
//! - [`mcmc`]: MALA-within-Gibbs sampler, adaptation, ESS, chain outputs
//! - [`sim`]: synthetic data generation and recovery studies
//! - [`posterior`]: arrival prediction, excursion functions, correlations

pub mod config;
pub mod dist;
pub mod error;
pub mod grid;
pub mod mcmc;
pub mod model;
pub mod posterior;
pub mod sim;
pub mod stats;
pub mod vecchia;

pub use error::{Error, Result};
