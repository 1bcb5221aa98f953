//! Synthetic data from the full model and simulate-fit-compare recovery
//! studies.
//!
//! Simulated records are raw inputs (checklists, occurrences, route counts)
//! so they pass through the same aggregation as real data and can be
//! written with [`crate::grid::write_inputs`].

mod generate;
mod recovery;

pub use generate::{
    sample_checklist_count, sample_positive_gev, scalars_from, simulate, simulate_data, simulate_latents,
    simulate_layout, simulation_grid, Simulation, Truncation, FULL_PIXELS, FULL_YEARS,
};
pub use recovery::{
    compare_with_truth, replicate_seeds, run_recovery_study, run_replicate, write_boxplot_csv, write_recovery_csv,
    CellRecovery, ParamRecovery, RecoveryOptions, RecoveryReport, ReplicateResult, ReplicateStatus, INTERVAL,
};
