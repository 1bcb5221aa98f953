use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::generate::{simulate, Simulation};
use crate::config::Config;
use crate::mcmc::{monitored_names, run_chain, PosteriorDraws};
use crate::model::{LatentState, Model};
use crate::posterior::{arrival_day_draws, summarise, EffortMode};
use crate::stats::quantile_sorted;
use crate::{Error, Result};

/// Central posterior interval used for coverage; arrival summaries use
/// the same 10% and 90% quantiles.
pub const INTERVAL: (f64, f64) = (0.1, 0.9);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Pixel-years drawn at random per replicate for interval coverage.
    pub eval_cells: usize,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions { replicates: 10, seed: 1, eval_cells: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecovery {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParamRecovery {
    pub fn covered(&self) -> bool {
        self.lower <= self.truth && self.truth <= self.upper
    }
}

/// True and predicted median arrival days of one pixel-year.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecovery {
    pub pixel_id: usize,
    pub year: i32,
    pub true_observed: f64,
    pub mean_observed: f64,
    pub lower_observed: f64,
    pub upper_observed: f64,
    pub true_debiased: f64,
    pub mean_debiased: f64,
    /// Debiased day not after the observed-effort day in every draw.
    pub debiased_earlier: bool,
    pub evaluated: bool,
}

impl CellRecovery {
    pub fn covered(&self) -> bool {
        self.lower_observed <= self.true_observed && self.true_observed <= self.upper_observed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplicateStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub sim_seed: u64,
    pub chain_seed: u64,
    pub status: ReplicateStatus,
    pub truncation_rate: f64,
    pub params: Vec<ParamRecovery>,
    pub cells: Vec<CellRecovery>,
    pub runtime_secs: f64,
}

impl ReplicateResult {
    pub fn ok(&self) -> bool {
        self.status == ReplicateStatus::Ok
    }

    pub fn param(&self, name: &str) -> Option<&ParamRecovery> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Fraction of evaluated pixel-years whose true day lies in the
    /// central posterior interval.
    pub fn coverage(&self) -> Option<f64> {
        let ev: Vec<&CellRecovery> = self.cells.iter().filter(|c| c.evaluated).collect();
        (!ev.is_empty()).then(|| ev.iter().filter(|c| c.covered()).count() as f64 / ev.len() as f64)
    }

    /// Mean absolute errors of the observed-effort and debiased posterior
    /// means against the true saturation-limit days.
    pub fn mae(&self) -> Option<(f64, f64)> {
        if self.cells.is_empty() {
            return None;
        }
        let n = self.cells.len() as f64;
        let obs = self.cells.iter().map(|c| (c.mean_observed - c.true_debiased).abs()).sum::<f64>() / n;
        let deb = self.cells.iter().map(|c| (c.mean_debiased - c.true_debiased).abs()).sum::<f64>() / n;
        Some((obs, deb))
    }

    pub fn debiased_always_earlier(&self) -> bool {
        self.cells.iter().all(|c| c.debiased_earlier)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub replicates: Vec<ReplicateResult>,
}

impl RecoveryReport {
    pub fn n_failed(&self) -> usize {
        self.replicates.iter().filter(|r| !r.ok()).count()
    }
}

/// Simulation and chain seeds of replicate `r`, fixed by the master seed.
pub fn replicate_seeds(master: u64, r: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r as u64 + 1);
    (rng.next_u64(), rng.next_u64())
}

fn param_summaries(truth: &LatentState, draws: &PosteriorDraws) -> Vec<ParamRecovery> {
    let flat = |s: &LatentState| {
        let mut v = s.scalars.to_array().to_vec();
        v.extend(s.hyper.iter().flat_map(|h| [h.sigma, h.kappa]));
        v
    };
    let truth_v = flat(truth);
    let series: Vec<Vec<f64>> = draws.draws.iter().map(flat).collect();
    monitored_names()
        .into_iter()
        .zip(truth_v)
        .enumerate()
        .map(|(j, (name, t))| {
            let mut v: Vec<f64> = series.iter().map(|s| s[j]).collect();
            v.sort_by(f64::total_cmp);
            ParamRecovery {
                name,
                truth: t,
                mean: v.iter().sum::<f64>() / v.len() as f64,
                lower: quantile_sorted(&v, INTERVAL.0),
                upper: quantile_sorted(&v, INTERVAL.1),
            }
        })
        .collect()
}

/// Compares a fitted chain with the truth it was simulated from.
///
/// True days use the same effort inputs as the predictions: the cell's
/// median duration where observed, else the pixel or overall mean.
pub fn compare_with_truth(
    model: &Model,
    years: &[i32],
    truth: &LatentState,
    draws: &PosteriorDraws,
    eval: &[usize],
) -> Result<(Vec<ParamRecovery>, Vec<CellRecovery>)> {
    let d = model.n_pixels();
    let single = PosteriorDraws { n_pixels: d, n_years: years.len(), draws: vec![truth.clone()] };
    let mut cells = Vec::with_capacity(d * years.len());
    for &year in years {
        let obs = arrival_day_draws(model, years, draws, year, None, EffortMode::Observed)?;
        let inf = arrival_day_draws(model, years, draws, year, None, EffortMode::Infinite)?;
        let t_obs = arrival_day_draws(model, years, &single, year, None, EffortMode::Observed)?;
        let t_inf = arrival_day_draws(model, years, &single, year, None, EffortMode::Infinite)?;
        for p in 0..d {
            let (mean_o, lo, _, hi) = summarise(&obs[p]);
            let (mean_i, _, _, _) = summarise(&inf[p]);
            cells.push(CellRecovery {
                pixel_id: p,
                year,
                true_observed: t_obs[p][0],
                mean_observed: mean_o,
                lower_observed: lo,
                upper_observed: hi,
                true_debiased: t_inf[p][0],
                mean_debiased: mean_i,
                debiased_earlier: obs[p].iter().zip(&inf[p]).all(|(o, i)| i <= o),
                evaluated: false,
            });
        }
    }
    for &c in eval {
        cells[c].evaluated = true;
    }
    Ok((param_summaries(truth, draws), cells))
}

/// Simulates, fits and compares one replicate. Errors become a failed
/// status rather than aborting the study.
pub fn run_replicate(cfg: &Config, opts: &RecoveryOptions, r: usize) -> ReplicateResult {
    let start = Instant::now();
    let (sim_seed, chain_seed) = replicate_seeds(opts.seed, r);
    let mut out = ReplicateResult {
        replicate: r,
        sim_seed,
        chain_seed,
        status: ReplicateStatus::Ok,
        truncation_rate: f64::NAN,
        params: Vec::new(),
        cells: Vec::new(),
        runtime_secs: 0.0,
    };
    let result = (|| -> Result<()> {
        let Simulation { grid, tables, truth, truncation, .. } = simulate(cfg, sim_seed)?;
        out.truncation_rate = truncation.rate();
        let model = Model::new(&grid, tables, &cfg.model)?;
        let mut chain_cfg = cfg.chain.clone();
        chain_cfg.seed = chain_seed;
        let fit = run_chain(&model, &chain_cfg, None)?;
        if fit.draws.is_empty() {
            return Err(Error::Validation("the fit recorded no posterior draws".into()));
        }
        let n_cells = model.n_pixels() * model.n_years();
        let mut rng = ChaCha8Rng::seed_from_u64(chain_seed ^ 0x5eed);
        let eval = sample(&mut rng, n_cells, opts.eval_cells.min(n_cells)).into_vec();
        let (params, cells) = compare_with_truth(&model, grid.years(), &truth, &fit.draws, &eval)?;
        out.params = params;
        out.cells = cells;
        Ok(())
    })();
    if let Err(e) = result {
        log::warn!("replicate {r} failed: {e}");
        out.status = ReplicateStatus::Failed(e.to_string());
    }
    out.runtime_secs = start.elapsed().as_secs_f64();
    out
}

/// Independent simulate-fit-compare replicates, run in parallel. The
/// report is ordered by replicate and does not depend on thread count.
pub fn run_recovery_study(cfg: &Config, opts: &RecoveryOptions) -> Result<RecoveryReport> {
    cfg.validate()?;
    let replicates: Vec<ReplicateResult> =
        (0..opts.replicates).into_par_iter().map(|r| run_replicate(cfg, opts, r)).collect();
    let report = RecoveryReport { replicates };
    if report.n_failed() > 0 {
        log::warn!("{} of {} replicates failed", report.n_failed(), opts.replicates);
    }
    Ok(report)
}

/// `recovery.csv`: one row per replicate and parameter, plus per-replicate
/// arrival metrics; failed replicates appear with their reason.
pub fn write_recovery_csv(path: &Path, report: &RecoveryReport) -> Result<()> {
    let err = |e: csv::Error| Error::Validation(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["replicate", "status", "parameter", "truth", "mean", "q10", "q90", "covered"]).map_err(err)?;
    let f = |x: f64| format!("{x:.6}");
    for r in &report.replicates {
        let id = r.replicate.to_string();
        if let ReplicateStatus::Failed(msg) = &r.status {
            w.write_record([id.as_str(), "failed", msg, "", "", "", "", ""]).map_err(err)?;
            continue;
        }
        for p in &r.params {
            let row = [id.clone(), "ok".into(), p.name.clone(), f(p.truth), f(p.mean), f(p.lower), f(p.upper), (p.covered() as u8).to_string()];
            w.write_record(&row).map_err(err)?;
        }
        let mut metric = |name: &str, v: f64| {
            w.write_record([id.as_str(), "ok", name, "", &f(v), "", "", ""]).map_err(err)
        };
        if let Some(c) = r.coverage() {
            metric("arrival_coverage_80", c)?;
        }
        if let Some((o, d)) = r.mae() {
            metric("mae_observed_days", o)?;
            metric("mae_debiased_days", d)?;
        }
        metric("debiased_always_earlier", r.debiased_always_earlier() as u8 as f64)?;
        metric("truncation_rate", r.truncation_rate)?;
    }
    w.flush().map_err(|e| Error::Io { file: path.to_path_buf(), source: e })
}

/// `boxplot_data.csv`: per replicate and pixel-year, posterior-mean minus
/// true median arrival day under both effort modes.
pub fn write_boxplot_csv(path: &Path, report: &RecoveryReport) -> Result<()> {
    let err = |e: csv::Error| Error::Validation(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record([
        "replicate", "pixel_id", "year", "true_day", "mean_day", "diff_days", "q10", "q90", "true_debiased_day",
        "mean_debiased_day", "diff_debiased_days", "evaluated",
    ])
    .map_err(err)?;
    let f = |x: f64| format!("{x:.4}");
    for r in report.replicates.iter().filter(|r| r.ok()) {
        for c in &r.cells {
            w.write_record([
                r.replicate.to_string(),
                c.pixel_id.to_string(),
                c.year.to_string(),
                f(c.true_observed),
                f(c.mean_observed),
                f(c.mean_observed - c.true_observed),
                f(c.lower_observed),
                f(c.upper_observed),
                f(c.true_debiased),
                f(c.mean_debiased),
                f(c.mean_debiased - c.true_debiased),
                (c.evaluated as u8).to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::Io { file: path.to_path_buf(), source: e })
}
