//! Run configuration, read from a single TOML file.
//!
//! Every key has a default; unknown keys are rejected so that typos fail
//! loudly. `Config::default()` serialised with [`Config::to_toml`] is the
//! canonical listing of all settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::vecchia::PcPrior;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub chain: ChainConfig,
    pub sim: SimConfig,
    pub predict: PredictConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { file: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.grid.cell_km > 0.0) {
            return bad(format!("grid.cell_km = {} must be positive", self.grid.cell_km));
        }
        let m = &self.model;
        if m.k == 0 {
            return bad("model.k must be at least 1".into());
        }
        if !(m.xi_lower < m.xi_upper) {
            return bad("model.xi_lower must be below model.xi_upper".into());
        }
        for (name, v) in [
            ("model.area_baseline_km2", m.area_baseline_km2),
            ("model.duration_scale_min", m.duration_scale_min),
            ("model.scalar_prior_var", m.scalar_prior_var),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive and finite"));
            }
        }
        m.pc_spatial.validate().map_err(|e| Error::Config(format!("model.pc_spatial: {e}")))?;
        m.pc_year.validate().map_err(|e| Error::Config(format!("model.pc_year: {e}")))?;

        let c = &self.chain;
        if c.thin == 0 {
            return bad("chain.thin must be at least 1".into());
        }
        if c.burn_in > c.iterations {
            return bad(format!("chain.burn_in {} exceeds chain.iterations {}", c.burn_in, c.iterations));
        }
        for (name, v) in [("chain.target_mala", c.target_mala), ("chain.target_rw", c.target_rw)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} = {v} must lie in (0, 1)"));
            }
        }
        if c.steps.values().iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
            return bad("chain.steps entries must be non-negative".into());
        }

        let s = &self.sim;
        if s.nx == 0 || s.ny == 0 || s.n_years == 0 {
            return bad("sim grid dimensions must be positive".into());
        }
        if let Some(r) = s.r {
            if !(r > 0.0) {
                return bad(format!("sim.r = {r} must be positive (omit it for Poisson counts)"));
            }
        }
        let p = &self.predict;
        if !(0.0..1.0).contains(&p.mask_threshold) {
            return bad(format!("predict.mask_threshold = {} must lie in [0, 1)", p.mask_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Width of the square pixel lattice in km.
    pub cell_km: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { cell_km: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Drop the count tables and every sharing pathway.
    pub gev_only: bool,
    /// Include the niche field in the GEV location bound.
    pub share_niche_gev: bool,
    /// Conditioning-set size of the spatial Vecchia factors.
    pub k: usize,
    /// Conditioning-set size of the temporal factor, capped at `T - 1`.
    pub k_year: usize,
    pub xi_lower: f64,
    pub xi_upper: f64,
    /// Pixel area (km²) at which the checklist offset is zero.
    pub area_baseline_km2: f64,
    /// Durations are divided by this before entering `1 / d`.
    pub duration_scale_min: f64,
    /// Variance of the normal priors on every scalar coefficient.
    pub scalar_prior_var: f64,
    pub pc_spatial: PcPrior,
    pub pc_year: PcPrior,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gev_only: false,
            share_niche_gev: true,
            k: 5,
            k_year: 5,
            xi_lower: -1.0,
            xi_upper: 0.5,
            area_baseline_km2: 400.0,
            duration_scale_min: 60.0,
            scalar_prior_var: 100.0,
            pc_spatial: PcPrior { kappa0: 40.0, alpha_kappa: 0.05, sigma0: 3.0, alpha_sigma: 0.05 },
            pc_year: PcPrior { kappa0: 2.0, alpha_kappa: 0.05, sigma0: 3.0, alpha_sigma: 0.05 },
        }
    }
}

/// Initial step sizes per update block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockSteps {
    pub pref: f64,
    pub year: f64,
    pub niche: f64,
    pub gev_mu: f64,
    pub gev_sigma: f64,
    pub count_scalars: f64,
    pub sharing_scalars: f64,
    pub gev_scalars: f64,
    pub hyper: f64,
}

impl BlockSteps {
    pub fn values(&self) -> [f64; 9] {
        [
            self.pref,
            self.year,
            self.niche,
            self.gev_mu,
            self.gev_sigma,
            self.count_scalars,
            self.sharing_scalars,
            self.gev_scalars,
            self.hyper,
        ]
    }
}

impl Default for BlockSteps {
    fn default() -> Self {
        BlockSteps {
            pref: 0.3,
            year: 0.3,
            niche: 0.3,
            gev_mu: 0.3,
            gev_sigma: 0.3,
            count_scalars: 0.02,
            sharing_scalars: 0.02,
            gev_scalars: 0.02,
            hyper: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Iterations of step-size adaptation; `None` adapts throughout burn-in.
    /// Adaptation never extends past burn-in.
    pub adapt_horizon: Option<usize>,
    pub target_mala: f64,
    pub target_rw: f64,
    pub steps: BlockSteps,
    /// Learn a proposal covariance for each scalar block during burn-in.
    pub adapt_scalar_covariance: bool,
    pub preconditioner: Preconditioning,
    /// Shift the GEV location field with each sharing-scalar proposal so
    /// that per-pixel GEV locations stay roughly fixed.
    pub compensate_sharing: bool,
}

/// Pre-whitening matrix of the field MALA blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioning {
    /// The field's prior covariance, updated with its hyperparameters.
    Prior,
    /// `(Q + H)⁻¹` from the prior precision `Q` and the diagonal likelihood
    /// curvature `H`, re-estimated at fixed burn-in iterations and fixed
    /// afterwards. Fields above [`crate::mcmc::MAX_DENSE_DIM`] pixels use
    /// the prior instead.
    #[default]
    Curvature,
}

impl ChainConfig {
    /// Number of recorded draws.
    pub fn n_draws(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    pub fn adapt_until(&self) -> usize {
        self.adapt_horizon.unwrap_or(self.burn_in).min(self.burn_in)
    }
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 20_000,
            burn_in: 15_000,
            thin: 4,
            seed: 1,
            adapt_horizon: None,
            target_mala: 0.57,
            target_rw: 0.30,
            steps: BlockSteps::default(),
            adapt_scalar_covariance: true,
            preconditioner: Preconditioning::default(),
            compensate_sharing: true,
        }
    }
}

/// True latent values for simulation. Scalars not listed keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimTruth {
    pub beta0_bbs: f64,
    pub beta0_ckl: f64,
    pub beta0_spc: f64,
    pub beta_act: f64,
    pub beta0_gev_mu: f64,
    pub beta1_gev_mu: f64,
    pub beta0_gev_sigma: f64,
    pub theta_eff: f64,
    pub theta_pref: f64,
    pub theta_act: f64,
    pub theta_niche_gev: f64,
    pub xi: f64,
    /// Standard deviation and range of each field, in the order
    /// preference, niche, GEV location, GEV scale, year.
    pub sigma: [f64; 5],
    pub kappa: [f64; 5],
}

impl Default for SimTruth {
    fn default() -> Self {
        SimTruth {
            beta0_bbs: 1.5,
            beta0_ckl: 3.0,
            beta0_spc: -1.5,
            beta_act: -0.5,
            beta0_gev_mu: 0.4,
            beta1_gev_mu: 0.01,
            beta0_gev_sigma: -2.3,
            theta_eff: 0.5,
            theta_pref: 0.191,
            theta_act: -0.15,
            theta_niche_gev: 0.049,
            xi: -0.3,
            sigma: [1.2, 1.0, 0.15, 0.15, 0.6],
            kappa: [100.0, 100.0, 100.0, 100.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub nx: usize,
    pub ny: usize,
    pub n_years: usize,
    pub first_year: i32,
    /// Use the full 1268-pixel, 21-year geometry instead of `nx × ny × n_years`.
    pub full_scale: bool,
    /// Negative-binomial size of checklist counts; absent means Poisson.
    pub r: Option<f64>,
    pub n_routes: usize,
    pub route_survey_prob: f64,
    /// Median checklist duration (minutes) and log-scale spreads between
    /// cells and between checklists.
    pub duration_median_min: f64,
    pub duration_cell_sd: f64,
    pub duration_checklist_sd: f64,
    pub truth: SimTruth,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            nx: 12,
            ny: 13,
            n_years: 6,
            first_year: 2001,
            full_scale: false,
            r: Some(10.0),
            n_routes: 40,
            route_survey_prob: 0.8,
            duration_median_min: 45.0,
            duration_cell_sd: 0.5,
            duration_checklist_sd: 0.6,
            truth: SimTruth::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Presence probability below which a cell is masked.
    pub mask_threshold: f64,
    /// Thresholds for excursion functions, applied to every field.
    pub excursion_thresholds: Vec<f64>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { mask_threshold: 0.01, excursion_thresholds: vec![0.0] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        let text = cfg.to_toml();
        assert_eq!(Config::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = Config::from_toml_str("[chain]\niterations = 100\nburn_in = 60\n").unwrap();
        assert_eq!(cfg.chain.iterations, 100);
        assert_eq!(cfg.chain.thin, 4);
        assert_eq!(cfg.chain.n_draws(), 10);
        assert_eq!(cfg.model.k, 5);
    }

    #[test]
    fn full_scale_draw_count() {
        let cfg = Config::from_toml_str("[chain]\niterations = 80000\nburn_in = 60000\nthin = 4\n").unwrap();
        assert_eq!(cfg.chain.n_draws(), 5000);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::from_toml_str("[chain]\niteratons = 5\n").is_err());
        assert!(Config::from_toml_str("[chain]\niterations = 5\nburn_in = 6\n").is_err());
        assert!(Config::from_toml_str("[model]\nxi_lower = 1.0\n").is_err());
        assert!(Config::from_toml_str("[sim]\nr = 0.0\n").is_err());
        let pc = "[model.pc_spatial]\nkappa0 = -1.0\nalpha_kappa = 0.05\nsigma0 = 3.0\nalpha_sigma = 0.05\n";
        let err = Config::from_toml_str(pc).unwrap_err().to_string();
        assert!(err.contains("pc_spatial"), "{err}");
    }
}
