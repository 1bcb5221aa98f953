//! Arrival prediction, excursion functions and land-cover correlations,
//! all computed from thinned posterior draws.

mod excursion;
mod landcover;
mod predict;

pub use crate::mcmc::PosteriorDraws;
pub use excursion::{excursion_function, write_excursions_csv, Excursion, ExcursionSet, ExcursionSign, RECOMMENDED_DRAWS};
pub use landcover::{landcover_correlation, write_correlations_csv, Correlation};
pub use predict::{
    arrival_day_draws, krige_year, median_day, niche_mask, predict_arrival, presence_means, summarise,
    write_arrival_csv, ArrivalSummary, EffortMode,
};

/// Default presence-probability threshold below which a pixel is masked.
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.01;

#[cfg(test)]
mod tests;
