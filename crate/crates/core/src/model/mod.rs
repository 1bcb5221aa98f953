//! The hierarchical model: latent state, linear predictors, the effort
//! pathway into the GEV location, and the joint log-posterior with analytic
//! gradients for every field block.
//!
//! Predictors, for pixel `p`, year `t` and cell `c = (p, t)`:
//!
//! ```text
//! log λᴮᴮˢ(p)  = β₀ᴮᴮˢ + x_niche(p)
//! log λᶜᵏˡ(c)  = β₀ᶜᵏˡ + x_year(t) + x_pref(p) + log(area(p) / area₀)
//! cloglog p(c) = β₀ˢᵖᶜ + x_niche(p) + βᵃᶜᵗ / d(c)
//! x_effort(c)  = θᵉᶠᶠ + θᵖʳᵉᶠ log λᶜᵏˡ(c) + θᵃᶜᵗ / d(c)
//! x_bound(c)   = β₀ᵘ + x_gev_mu(p) + β₁ᵘ NAO(t) + θⁿⁱᶜʰᵉ x_niche(p)
//! μ(c)         = g(x_bound, x_effort) = exp(x_bound) / (1 + exp(-x_effort))
//! log σ(p)     = β₀ˢⁱᵍ + x_gev_sigma(p)
//! ```
//!
//! `d` is the median checklist duration divided by
//! [`ModelConfig::duration_scale_min`].

mod state;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use state::{Field, LatentState, ScalarBlock, ScalarId, Scalars, SUM_TO_ZERO_TOL};

use crate::config::ModelConfig;
use crate::dist::{count_loglik_grad, gev_logpdf_grad, CountKind, GevParams};
use crate::grid::{PixelGrid, ResponseTables};
use crate::vecchia::{Coord, GpHyper, PcPrior, SumToZero, VecchiaFactor, VecchiaGeometry};
use crate::{Error, Result};

/// `log(1 + e^y)` without overflow.
#[inline]
pub(crate) fn softplus(y: f64) -> f64 {
    y.max(0.0) + (-y.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn logistic(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// Saturating sharing function `exp(x_bound) / (1 + exp(-x_effort))`.
pub fn saturating_g(x_bound: f64, x_effort: f64) -> f64 {
    (x_bound - softplus(-x_effort)).exp()
}

/// `(g, ∂g/∂x_bound, ∂g/∂x_effort)`.
pub fn g_partials(x_bound: f64, x_effort: f64) -> (f64, f64, f64) {
    let g = saturating_g(x_bound, x_effort);
    (g, g, g * logistic(-x_effort))
}

/// Combined effort `θᵉᶠᶠ + θᵖʳᵉᶠ log λ + θᵃᶜᵗ / d`. An infinite duration
/// removes the activity term.
pub fn effort(s: &Scalars, lambda_ckl: f64, d: f64) -> Result<f64> {
    if !(lambda_ckl > 0.0) {
        return Err(Error::Domain(format!("checklist intensity {lambda_ckl} must be positive")));
    }
    if !(d > 0.0) {
        return Err(Error::Domain(format!("duration {d} must be positive")));
    }
    Ok(effort_from_log(s, lambda_ckl.ln(), 1.0 / d))
}

#[inline]
pub(crate) fn effort_from_log(s: &Scalars, log_lambda_ckl: f64, inv_d: f64) -> f64 {
    s.theta_eff + s.theta_pref * log_lambda_ckl + s.theta_act * inv_d
}

/// Which data tables contribute to the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataTerms {
    pub bbs: bool,
    pub checklists: bool,
    pub presences: bool,
    pub arrivals: bool,
}

impl DataTerms {
    pub const ALL: DataTerms = DataTerms { bbs: true, checklists: true, presences: true, arrivals: true };
    pub const NONE: DataTerms = DataTerms { bbs: false, checklists: false, presences: false, arrivals: false };
}

/// Prior factor of one field plus its sum-to-zero conditioning quantities.
#[derive(Debug, Clone)]
pub struct FieldPrior {
    pub factor: VecchiaFactor,
    pub constraint: SumToZero,
}

impl FieldPrior {
    /// Log-density of a centred field under the constrained prior.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.factor.constrained_log_density(x, &self.constraint)
    }
}

/// Predictor values for every pixel and cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorValues {
    pub log_lambda_bbs: Vec<f64>,
    pub log_lambda_ckl: Vec<f64>,
    /// Present where a median duration is observed.
    pub cloglog_spc: Vec<Option<f64>>,
    pub x_effort: Vec<f64>,
    pub x_bound: Vec<f64>,
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

/// Joint log-posterior split into its terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogPosterior {
    pub bbs: f64,
    pub checklists: f64,
    pub presences: f64,
    pub arrivals: f64,
    pub field_priors: [f64; 5],
    pub hyper_priors: [f64; 5],
    pub scalar_priors: f64,
}

impl LogPosterior {
    pub fn likelihood(&self) -> f64 {
        self.bbs + self.checklists + self.presences + self.arrivals
    }

    pub fn prior(&self) -> f64 {
        self.field_priors.iter().sum::<f64>() + self.hyper_priors.iter().sum::<f64>() + self.scalar_priors
    }

    pub fn total(&self) -> f64 {
        let t = self.likelihood() + self.prior();
        if t.is_nan() {
            f64::NEG_INFINITY
        } else {
            t
        }
    }
}

/// Static model ingredients: data, geometry and configuration.
#[derive(Debug)]
pub struct Model {
    n_pixels: usize,
    n_years: usize,
    log_area: Vec<f64>,
    tables: ResponseTables,
    inv_d: Vec<Option<f64>>,
    cfg: ModelConfig,
    spatial: Arc<VecchiaGeometry>,
    temporal: Arc<VecchiaGeometry>,
    terms: DataTerms,
    nonfinite: AtomicU64,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            n_pixels: self.n_pixels,
            n_years: self.n_years,
            log_area: self.log_area.clone(),
            tables: self.tables.clone(),
            inv_d: self.inv_d.clone(),
            cfg: self.cfg.clone(),
            spatial: self.spatial.clone(),
            temporal: self.temporal.clone(),
            terms: self.terms,
            nonfinite: AtomicU64::new(self.nonfinite.load(Ordering::Relaxed)),
        }
    }
}

impl Model {
    pub fn new(grid: &PixelGrid, tables: ResponseTables, cfg: &ModelConfig) -> Result<Self> {
        let years: Vec<f64> = grid.years().iter().map(|&y| y as f64).collect();
        let areas: Vec<f64> = grid.pixels().iter().map(|p| p.area).collect();
        Self::from_parts(&grid.coords(), &areas, &years, tables, cfg)
    }

    /// Builds a model from projected pixel coordinates (km), pixel areas
    /// (km²) and year values.
    pub fn from_parts(
        coords: &[Coord],
        areas: &[f64],
        years: &[f64],
        tables: ResponseTables,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        tables.validate()?;
        let (d, t) = (coords.len(), years.len());
        if tables.n_pixels != d || areas.len() != d {
            return Err(Error::Dimension { expected: d, got: tables.n_pixels });
        }
        if tables.n_years != t {
            return Err(Error::Dimension { expected: t, got: tables.n_years });
        }
        let spatial = VecchiaGeometry::new(coords, cfg.k)?;
        let year_coords: Vec<Coord> = years.iter().map(|&y| [y, 0.0]).collect();
        let temporal = VecchiaGeometry::new(&year_coords, cfg.k_year.min(t.saturating_sub(1)).max(1))?;
        let log_area = areas.iter().map(|a| (a / cfg.area_baseline_km2).ln()).collect();
        let inv_d = tables
            .median_duration
            .iter()
            .map(|d| d.map(|d| cfg.duration_scale_min / d))
            .collect();
        Ok(Model {
            n_pixels: d,
            n_years: t,
            log_area,
            tables,
            inv_d,
            cfg: cfg.clone(),
            spatial,
            temporal,
            terms: DataTerms::ALL,
            nonfinite: AtomicU64::new(0),
        })
    }

    pub fn with_terms(mut self, terms: DataTerms) -> Self {
        self.terms = terms;
        self
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    pub fn n_years(&self) -> usize {
        self.n_years
    }

    pub fn tables(&self) -> &ResponseTables {
        &self.tables
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// `log(area / area₀)` per pixel.
    pub fn log_area(&self) -> &[f64] {
        &self.log_area
    }

    /// Scaled inverse median duration per cell.
    pub fn inv_duration(&self) -> &[Option<f64>] {
        &self.inv_d
    }

    pub fn gev_only(&self) -> bool {
        self.cfg.gev_only
    }

    pub fn geometry(&self, f: Field) -> &Arc<VecchiaGeometry> {
        if f.is_spatial() {
            &self.spatial
        } else {
            &self.temporal
        }
    }

    pub fn pc_prior(&self, f: Field) -> &PcPrior {
        if f.is_spatial() {
            &self.cfg.pc_spatial
        } else {
            &self.cfg.pc_year
        }
    }

    /// Fields that are part of the model. The GEV-only model keeps only the
    /// two GEV fields.
    pub fn field_active(&self, f: Field) -> bool {
        !self.cfg.gev_only || matches!(f, Field::GevMu | Field::GevSigma)
    }

    pub fn active_fields(&self) -> Vec<Field> {
        Field::ALL.into_iter().filter(|&f| self.field_active(f)).collect()
    }

    /// Scalars held fixed at their initial value.
    pub fn scalar_frozen(&self, id: ScalarId) -> bool {
        if self.cfg.gev_only {
            return matches!(id.block(), ScalarBlock::Count | ScalarBlock::Sharing);
        }
        id == ScalarId::ThetaNicheGev && !self.cfg.share_niche_gev
    }

    pub fn free_scalars(&self, block: ScalarBlock) -> Vec<ScalarId> {
        block.members().into_iter().filter(|&id| !self.scalar_frozen(id)).collect()
    }

    /// Zero fields and scalars with hyperparameters at the prior medians.
    pub fn initial_state(&self) -> LatentState {
        let hyper = Field::ALL.map(|f| self.pc_prior(f).median());
        LatentState::zeros(self.n_pixels, self.n_years, hyper)
    }

    pub fn field_prior(&self, f: Field, h: GpHyper) -> Result<FieldPrior> {
        let factor = self.geometry(f).factor(h)?;
        let constraint = factor.sum_to_zero();
        Ok(FieldPrior { factor, constraint })
    }

    pub fn priors(&self, state: &LatentState) -> Result<Vec<FieldPrior>> {
        Field::ALL.iter().map(|&f| self.field_prior(f, state.hyper[f.index()])).collect()
    }

    /// Number of evaluations that produced a non-finite predictor.
    pub fn nonfinite_count(&self) -> u64 {
        self.nonfinite.load(Ordering::Relaxed)
    }

    fn check_state(&self, state: &LatentState) -> Result<()> {
        for f in Field::ALL {
            let want = if f.is_spatial() { self.n_pixels } else { self.n_years };
            if state.field(f).len() != want {
                return Err(Error::Dimension { expected: want, got: state.field(f).len() });
            }
        }
        Ok(())
    }

    #[inline]
    fn cell(&self, p: usize, t: usize) -> usize {
        t * self.n_pixels + p
    }

    pub(crate) fn log_lambda_ckl(&self, s: &LatentState, p: usize, t: usize) -> f64 {
        s.scalars.beta0_ckl + s.field(Field::Year)[t] + s.field(Field::Pref)[p] + self.log_area[p]
    }

    /// `(x_bound, x_effort)` of a cell; the activity term uses `inv_d`.
    /// In the GEV-only model the effort is infinite.
    fn location_inputs(&self, s: &LatentState, p: usize, t: usize, inv_d: f64) -> (f64, f64) {
        let sc = &s.scalars;
        let x_bound = sc.beta0_gev_mu
            + s.field(Field::GevMu)[p]
            + sc.beta1_gev_mu * self.tables.nao[t]
            + sc.theta_niche_gev * s.field(Field::Niche)[p];
        if self.cfg.gev_only {
            return (x_bound, f64::INFINITY);
        }
        (x_bound, effort_from_log(sc, self.log_lambda_ckl(s, p, t), inv_d))
    }

    /// Per-pixel part of `log μ` set by the sharing scalars:
    /// `θⁿⁱᶜʰᵉ x_niche − softplus(−x_effort)`, the latter averaged over the
    /// pixel's cells with an arrival. Zero effort part where there are none.
    pub fn sharing_offsets(&self, s: &LatentState) -> Vec<f64> {
        let niche = s.field(Field::Niche);
        (0..self.n_pixels)
            .map(|p| {
                let (mut sum, mut n) = (0.0, 0usize);
                for t in 0..self.n_years {
                    let c = self.cell(p, t);
                    if let (Some(inv_d), Some(_)) = (self.inv_d[c], self.tables.z[c]) {
                        let (_, xe) = self.location_inputs(s, p, t, inv_d);
                        sum += softplus(-xe);
                        n += 1;
                    }
                }
                let eff = if n > 0 { sum / n as f64 } else { 0.0 };
                s.scalars.theta_niche_gev * niche[p] - eff
            })
            .collect()
    }

    /// GEV parameters of a cell for a given activity covariate.
    pub fn gev_params(&self, s: &LatentState, p: usize, t: usize, inv_d: f64) -> (f64, f64, f64) {
        let (xb, xe) = self.location_inputs(s, p, t, inv_d);
        let mu = saturating_g(xb, xe);
        let sigma = (s.scalars.beta0_gev_sigma + s.field(Field::GevSigma)[p]).exp();
        (mu, sigma, s.scalars.xi)
    }

    /// GEV parameters at pixel `p` for a year given by its `x_year` value and
    /// NAO index, possibly outside the fitted years. `inv_d = None` means
    /// infinite effort, where `μ = exp(x_bound)`.
    pub fn gev_params_for_year(
        &self,
        s: &LatentState,
        p: usize,
        x_year: f64,
        nao: f64,
        inv_d: Option<f64>,
    ) -> (f64, f64, f64) {
        let sc = &s.scalars;
        let x_bound = sc.beta0_gev_mu
            + s.field(Field::GevMu)[p]
            + sc.beta1_gev_mu * nao
            + sc.theta_niche_gev * s.field(Field::Niche)[p];
        let mu = match inv_d {
            Some(v) if !self.cfg.gev_only => {
                let log_lambda = sc.beta0_ckl + x_year + s.field(Field::Pref)[p] + self.log_area[p];
                saturating_g(x_bound, effort_from_log(sc, log_lambda, v))
            }
            _ => x_bound.exp(),
        };
        let sigma = (sc.beta0_gev_sigma + s.field(Field::GevSigma)[p]).exp();
        (mu, sigma, sc.xi)
    }

    /// Activity covariate `duration_scale / d` for a duration in minutes.
    pub fn inv_duration_of(&self, minutes: f64) -> f64 {
        self.cfg.duration_scale_min / minutes
    }

    /// Location bound `x_bound` of a cell (the infinite-effort log location).
    pub fn x_bound(&self, s: &LatentState, p: usize, t: usize) -> f64 {
        self.location_inputs(s, p, t, 0.0).0
    }

    /// Presence probability of a cell for a given activity covariate.
    pub fn presence_probability(&self, s: &LatentState, p: usize, inv_d: f64) -> f64 {
        crate::dist::inv_cloglog(s.scalars.beta0_spc + s.field(Field::Niche)[p] + s.scalars.beta_act * inv_d)
    }

    /// All predictors. Cells without an observed duration omit the activity
    /// terms.
    pub fn predictors(&self, s: &LatentState) -> Result<PredictorValues> {
        self.check_state(s)?;
        let (d, t_n) = (self.n_pixels, self.n_years);
        let mut out = PredictorValues {
            log_lambda_bbs: (0..d).map(|p| s.scalars.beta0_bbs + s.field(Field::Niche)[p]).collect(),
            log_lambda_ckl: Vec::with_capacity(d * t_n),
            cloglog_spc: Vec::with_capacity(d * t_n),
            x_effort: Vec::with_capacity(d * t_n),
            x_bound: Vec::with_capacity(d * t_n),
            mu: Vec::with_capacity(d * t_n),
            log_sigma: (0..d).map(|p| s.scalars.beta0_gev_sigma + s.field(Field::GevSigma)[p]).collect(),
        };
        for t in 0..t_n {
            for p in 0..d {
                let c = self.cell(p, t);
                let inv_d = self.inv_d[c];
                out.log_lambda_ckl.push(self.log_lambda_ckl(s, p, t));
                out.cloglog_spc.push(
                    inv_d.map(|v| s.scalars.beta0_spc + s.field(Field::Niche)[p] + s.scalars.beta_act * v),
                );
                let (xb, xe) = self.location_inputs(s, p, t, inv_d.unwrap_or(0.0));
                out.x_effort.push(xe);
                out.x_bound.push(xb);
                out.mu.push(saturating_g(xb, xe));
            }
        }
        Ok(out)
    }

    fn normal_prior(&self, x: f64) -> f64 {
        let v = self.cfg.scalar_prior_var;
        -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + x * x / v)
    }

    fn scalar_prior(&self, s: &Scalars) -> f64 {
        if !(s.xi > self.cfg.xi_lower && s.xi < self.cfg.xi_upper) {
            return f64::NEG_INFINITY;
        }
        ScalarId::ALL
            .into_iter()
            .filter(|&id| !self.scalar_frozen(id))
            .map(|id| self.normal_prior(s.get(id)))
            .sum()
    }

    /// Joint log-posterior given prebuilt field priors for `state.hyper`.
    pub fn log_posterior(&self, state: &LatentState, priors: &[FieldPrior]) -> Result<LogPosterior> {
        Ok(self.evaluate(state, priors, false)?.0)
    }

    /// Joint log-posterior, building the field priors from `state.hyper`.
    pub fn log_posterior_at(&self, state: &LatentState) -> Result<LogPosterior> {
        self.log_posterior(state, &self.priors(state)?)
    }

    /// Gradient of the joint log-posterior with respect to one field.
    pub fn block_gradient(&self, state: &LatentState, priors: &[FieldPrior], block: Field) -> Result<Vec<f64>> {
        let (_, mut grads) = self.evaluate(state, priors, true)?;
        Ok(std::mem::take(&mut grads[block.index()]))
    }

    /// Log-posterior and the gradients with respect to every field.
    pub fn log_posterior_grad(
        &self,
        state: &LatentState,
        priors: &[FieldPrior],
    ) -> Result<(LogPosterior, [Vec<f64>; 5])> {
        self.evaluate(state, priors, true)
    }

    fn evaluate(&self, s: &LatentState, priors: &[FieldPrior], want_grad: bool) -> Result<(LogPosterior, [Vec<f64>; 5])> {
        self.check_state(s)?;
        if priors.len() != 5 {
            return Err(Error::Dimension { expected: 5, got: priors.len() });
        }
        let (d, t_n) = (self.n_pixels, self.n_years);
        let sc = &s.scalars;
        let mut lp = LogPosterior::default();
        let mut g: [Vec<f64>; 5] = Field::ALL.map(|f| if want_grad { vec![0.0; s.field(f).len()] } else { Vec::new() });
        let [g_pref, g_niche, g_mu, g_sig, g_year] = &mut g;
        let mut nonfinite = false;
        let counts = !self.cfg.gev_only;

        if counts && self.terms.bbs {
            let niche = s.field(Field::Niche);
            for obs in &self.tables.bbs {
                let intensity: f64 =
                    obs.weights.iter().map(|&(p, w)| w * (sc.beta0_bbs + niche[p]).exp()).sum();
                let term = count_loglik_grad(CountKind::Poisson, obs.count, intensity.ln())?;
                nonfinite |= !intensity.is_finite();
                lp.bbs += term.loglik;
                if want_grad {
                    // d/dx_niche(p) = (n/Λ - 1) w_p λ_p = grad · w_p λ_p / Λ
                    for &(p, w) in &obs.weights {
                        g_niche[p] += term.grad * w * (sc.beta0_bbs + niche[p]).exp() / intensity;
                    }
                }
            }
        }

        for t in 0..t_n {
            for p in 0..d {
                let c = self.cell(p, t);
                let log_lambda = self.log_lambda_ckl(s, p, t);
                let n_ckl = self.tables.checklists(c);
                if counts && self.terms.checklists && self.tables.n_ckl[c].is_some() {
                    let term = count_loglik_grad(CountKind::Poisson, n_ckl, log_lambda)?;
                    nonfinite |= !term.loglik.is_finite();
                    lp.checklists += term.loglik;
                    if want_grad {
                        g_pref[p] += term.grad;
                        g_year[t] += term.grad;
                    }
                }
                let Some(inv_d) = self.inv_d[c] else { continue };
                if counts && self.terms.presences {
                    let eta = sc.beta0_spc + s.field(Field::Niche)[p] + sc.beta_act * inv_d;
                    let n_spc = self.tables.n_spc[c].unwrap_or(0);
                    let term = count_loglik_grad(CountKind::BinomialCloglog { trials: n_ckl }, n_spc, eta)?;
                    nonfinite |= !eta.is_finite();
                    lp.presences += term.loglik;
                    if want_grad {
                        g_niche[p] += term.grad;
                    }
                }
                let Some(z) = self.tables.z[c] else { continue };
                if !self.terms.arrivals {
                    continue;
                }
                let (xb, xe) = self.location_inputs(s, p, t, inv_d);
                let (mu, dmu_dxb, dmu_dxe) = g_partials(xb, xe);
                let sigma = (sc.beta0_gev_sigma + s.field(Field::GevSigma)[p]).exp();
                if !(mu.is_finite() && mu > 0.0 && sigma.is_finite() && sigma > 0.0) {
                    nonfinite = true;
                    continue;
                }
                let dens = gev_logpdf_grad(z, &GevParams { mu, sigma, xi: sc.xi });
                lp.arrivals += dens.logpdf;
                if want_grad && dens.in_support {
                    let d_xb = dens.d_mu * dmu_dxb;
                    g_mu[p] += d_xb;
                    g_niche[p] += d_xb * sc.theta_niche_gev;
                    g_sig[p] += dens.d_log_sigma;
                    if counts {
                        // x_effort depends on log λᶜᵏˡ through θᵖʳᵉᶠ
                        let d_lambda = dens.d_mu * dmu_dxe * sc.theta_pref;
                        g_pref[p] += d_lambda;
                        g_year[t] += d_lambda;
                    }
                }
            }
        }

        for f in Field::ALL {
            if !self.field_active(f) {
                continue;
            }
            let fp = &priors[f.index()];
            let x = s.field(f);
            if want_grad {
                let (logd, grad) = fp.factor.log_density_grad(x)?;
                lp.field_priors[f.index()] = logd + fp.constraint.log_normaliser();
                for (gi, pi) in g[f.index()].iter_mut().zip(grad) {
                    *gi += pi;
                }
            } else {
                lp.field_priors[f.index()] = fp.log_density(x)?;
            }
            lp.hyper_priors[f.index()] = self.pc_prior(f).log_density(&s.hyper[f.index()])?;
        }
        lp.scalar_priors = self.scalar_prior(sc);

        if nonfinite {
            self.nonfinite.fetch_add(1, Ordering::Relaxed);
            lp.arrivals = f64::NEG_INFINITY;
        }
        if want_grad {
            for f in Field::ALL {
                if !self.field_active(f) {
                    g[f.index()].iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        Ok((lp, g))
    }
}

#[cfg(test)]
pub(crate) mod tests;
