use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dist::{gev_quantile, z_to_day, GevParams, DAYS_IN_YEAR};
use crate::mcmc::PosteriorDraws;
use crate::model::{Field, LatentState, Model};
use crate::stats::quantile_sorted;
use crate::vecchia::exp_cov;
use crate::{Error, Result};

/// Effort assumed when predicting arrival dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EffortMode {
    /// Model-implied checklist intensity and the cell's duration.
    Observed,
    /// Saturated effort, `μ = exp(x_bound)`: the debiased prediction.
    Infinite,
}

impl EffortMode {
    pub fn name(self) -> &'static str {
        match self {
            EffortMode::Observed => "observed",
            EffortMode::Infinite => "infinite",
        }
    }
}

impl fmt::Display for EffortMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EffortMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed" => Ok(EffortMode::Observed),
            "infinite" | "debiased" => Ok(EffortMode::Infinite),
            _ => Err(Error::Validation(format!("unknown effort mode {s:?}; use observed or infinite"))),
        }
    }
}

/// Posterior summary of the median arrival day in one pixel-year.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalSummary {
    pub pixel_id: usize,
    pub year: i32,
    pub mode: EffortMode,
    pub mean: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    /// Posterior mean presence probability below the mask threshold. The
    /// dates are still reported.
    pub masked: bool,
    pub presence_prob: f64,
}

/// Day of year of the GEV median, `366·exp(-z_median)`, capped at 366.
pub fn median_day(mu: f64, sigma: f64, xi: f64) -> Result<f64> {
    let z = gev_quantile(0.5, &GevParams::new(mu, sigma, xi)?)?;
    Ok(z_to_day(z).min(DAYS_IN_YEAR))
}

/// Where the year covariates of a prediction come from.
#[derive(Debug, Clone, PartialEq)]
struct YearInputs {
    /// Index among the fitted years, if the year was fitted.
    fitted: Option<usize>,
    nao: f64,
    /// `x_year` per draw.
    x_year: Vec<f64>,
}

/// Prior-conditional mean of the temporal field at `year` given a draw's
/// values at the fitted years.
pub fn krige_year(fitted_years: &[i32], state: &LatentState, year: i32) -> Result<f64> {
    let x = state.field(Field::Year);
    if x.len() != fitted_years.len() {
        return Err(Error::Dimension { expected: fitted_years.len(), got: x.len() });
    }
    let h = state.hyper[Field::Year.index()];
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| exp_cov((fitted_years[i] - fitted_years[j]).abs() as f64, &h));
    let kstar = DVector::from_fn(n, |i, _| exp_cov((fitted_years[i] - year).abs() as f64, &h));
    let chol = nalgebra::Cholesky::new(k).ok_or_else(|| Error::Domain("year covariance is singular".into()))?;
    Ok(kstar.dot(&chol.solve(&DVector::from_column_slice(x))))
}

fn year_inputs(model: &Model, years: &[i32], draws: &PosteriorDraws, year: i32, nao: Option<f64>) -> Result<YearInputs> {
    if years.len() != model.n_years() {
        return Err(Error::Dimension { expected: model.n_years(), got: years.len() });
    }
    match years.iter().position(|&y| y == year) {
        Some(t) => Ok(YearInputs {
            fitted: Some(t),
            nao: nao.unwrap_or(model.tables().nao[t]),
            x_year: draws.draws.iter().map(|d| d.field(Field::Year)[t]).collect(),
        }),
        None => {
            let nao = nao.ok_or_else(|| Error::Validation(format!("year {year} was not fitted; supply its NAO value")))?;
            let x_year = draws.draws.iter().map(|d| krige_year(years, d, year)).collect::<Result<_>>()?;
            Ok(YearInputs { fitted: None, nao, x_year })
        }
    }
}

/// Activity covariate per pixel: the cell's median duration when observed,
/// else the pixel's mean over years, else the overall mean.
fn observed_inv_durations(model: &Model, fitted: Option<usize>) -> Result<Vec<f64>> {
    let tables = model.tables();
    let pixel_means = tables.pixel_mean_durations();
    let overall = tables.overall_mean_duration();
    (0..model.n_pixels())
        .map(|p| {
            let cell = fitted.and_then(|t| tables.median_duration[t * model.n_pixels() + p]);
            let d = cell
                .or(pixel_means[p])
                .or(overall)
                .ok_or_else(|| Error::Validation("no checklist durations to use for observed effort".into()))?;
            Ok(model.inv_duration_of(d))
        })
        .collect()
}

/// Posterior mean presence probability per pixel using each pixel's mean
/// duration over all years (the overall mean where a pixel has none).
pub fn presence_means(model: &Model, draws: &PosteriorDraws) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::Validation("no posterior draws".into()));
    }
    let inv_d = observed_inv_durations(model, None)?;
    let n = draws.len() as f64;
    Ok((0..model.n_pixels())
        .map(|p| draws.draws.iter().map(|d| model.presence_probability(d, p, inv_d[p])).sum::<f64>() / n)
        .collect())
}

/// Pixels whose posterior mean presence probability is below `threshold`.
pub fn niche_mask(model: &Model, draws: &PosteriorDraws, threshold: f64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Validation(format!("mask threshold {threshold} must lie in [0, 1)")));
    }
    Ok(presence_means(model, draws)?.into_iter().map(|p| p < threshold).collect())
}

/// Per-draw median arrival days for every pixel in `year`.
///
/// `days[p][k]` is pixel `p` under draw `k`. Years outside the fitted range
/// need an NAO value and use the kriged temporal field.
pub fn arrival_day_draws(
    model: &Model,
    years: &[i32],
    draws: &PosteriorDraws,
    year: i32,
    nao: Option<f64>,
    mode: EffortMode,
) -> Result<Vec<Vec<f64>>> {
    if draws.is_empty() {
        return Err(Error::Validation("no posterior draws".into()));
    }
    let yi = year_inputs(model, years, draws, year, nao)?;
    let inv_d = match mode {
        EffortMode::Observed => Some(observed_inv_durations(model, yi.fitted)?),
        EffortMode::Infinite => None,
    };
    (0..model.n_pixels())
        .into_par_iter()
        .map(|p| {
            draws
                .draws
                .iter()
                .zip(&yi.x_year)
                .map(|(d, &xy)| {
                    let (mu, sigma, xi) = model.gev_params_for_year(d, p, xy, yi.nao, inv_d.as_ref().map(|v| v[p]));
                    median_day(mu, sigma, xi)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

/// Mean and central quantiles of per-draw values, independent of draw order.
pub fn summarise(values: &[f64]) -> (f64, f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (mean, quantile_sorted(&v, 0.1), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.9))
}

/// Posterior summaries of the median arrival day for every pixel in `year`.
pub fn predict_arrival(
    model: &Model,
    years: &[i32],
    draws: &PosteriorDraws,
    year: i32,
    nao: Option<f64>,
    mode: EffortMode,
    mask_threshold: f64,
) -> Result<Vec<ArrivalSummary>> {
    let days = arrival_day_draws(model, years, draws, year, nao, mode)?;
    let presence = presence_means(model, draws)?;
    if !(0.0..1.0).contains(&mask_threshold) {
        return Err(Error::Validation(format!("mask threshold {mask_threshold} must lie in [0, 1)")));
    }
    Ok(days
        .iter()
        .enumerate()
        .map(|(p, d)| {
            let (mean, q10, q50, q90) = summarise(d);
            ArrivalSummary {
                pixel_id: p,
                year,
                mode,
                mean,
                q10,
                q50,
                q90,
                masked: presence[p] < mask_threshold,
                presence_prob: presence[p],
            }
        })
        .collect())
}

pub fn write_arrival_csv(path: &std::path::Path, rows: &[ArrivalSummary]) -> Result<()> {
    let err = |e: csv::Error| Error::Validation(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["pixel_id", "year", "mode", "q10", "q50", "q90", "masked", "mean", "presence_prob"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.pixel_id.to_string(),
            r.year.to_string(),
            r.mode.to_string(),
            format!("{:.6}", r.q10),
            format!("{:.6}", r.q50),
            format!("{:.6}", r.q90),
            (r.masked as u8).to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6e}", r.presence_prob),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Io { file: path.to_path_buf(), source: e })
}
