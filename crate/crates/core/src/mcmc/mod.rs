//! MALA-within-Gibbs sampler.
//!
//! Each latent field is updated by a Langevin proposal preconditioned with
//! its current Vecchia prior covariance and conditioned on a zero sum. Scalar
//! blocks and `(σ, κ)` pairs use random-walk Metropolis on their natural and
//! log scales. Every block draws from its own ChaCha stream of the master
//! seed, so a run is reproducible regardless of thread count.

mod adapt;
mod chain;
mod curvature;
mod draws;
mod ess;
mod gev_fit;
mod mala;
mod output;

pub use adapt::{adapt_step, RandomWalk, StepAdapter, GAIN_EXPONENT};
pub use chain::{hyper_update, monitored_names, run_chain, starting_state, HyperMove, Block, BlockSummary, ChainOutput, TraceRow, FIELD_SWEEP, N_BLOCKS};
pub use curvature::{curvature_preconditioner, likelihood_curvature, prior_precision, MAX_DENSE_DIM};
pub use draws::{PosteriorDraws, DRAWS_MAGIC, DRAWS_VERSION};
pub use ess::{ess, Ess, MIN_ESS_LEN};
pub use gev_fit::{fit_iid_gev, GevFit, GevFitConfig};
pub use mala::{mala_log_q, mala_propose, mala_step, DenseCov, Eval, Identity, Preconditioner, Proposal, StepResult, ZeroSum};
pub use output::{
    chain_diagnostics, read_trace_csv, trace_diagnostics, trace_header, write_diagnostics_csv, write_tidy_trace_csv,
    write_trace_csv, DiagnosticRow, TraceTable,
};

#[cfg(test)]
mod tests;
