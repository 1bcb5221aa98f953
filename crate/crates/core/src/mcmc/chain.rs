use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adapt::{RandomWalk, StepAdapter};
use super::draws::PosteriorDraws;
use super::ess::{ess, Ess};
use super::gev_fit::{fit_iid_gev, GevFitConfig};
use super::curvature::{curvature_preconditioner, is_refresh_point, MAX_DENSE_DIM};
use super::mala::{mala_step, DenseCov, Eval, Preconditioner, ZeroSum};
use crate::config::{ChainConfig, Preconditioning};
use crate::model::{Field, FieldPrior, LatentState, Model, ScalarBlock, ScalarId};
use crate::vecchia::GpHyper;
use crate::{Error, Result};

/// One update block of the Gibbs sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Field(Field),
    Scalars(ScalarBlock),
    Hyper(Field),
}

/// Field visiting order within a sweep.
pub const FIELD_SWEEP: [Field; 5] = [Field::Pref, Field::Year, Field::Niche, Field::GevMu, Field::GevSigma];

pub const N_BLOCKS: usize = 13;

/// Step after a preconditioner refresh, times `d^(-1/6)`.
const RESTART_SCALE: f64 = 1.2;

/// Keeps the start-value fit off the chain's own random streams.
const START_SEED_MIX: u64 = 0x57a7;

impl Block {
    pub const SWEEP: [Block; N_BLOCKS] = [
        Block::Field(Field::Pref),
        Block::Field(Field::Year),
        Block::Field(Field::Niche),
        Block::Field(Field::GevMu),
        Block::Field(Field::GevSigma),
        Block::Scalars(ScalarBlock::Count),
        Block::Scalars(ScalarBlock::Sharing),
        Block::Scalars(ScalarBlock::Gev),
        Block::Hyper(Field::Pref),
        Block::Hyper(Field::Year),
        Block::Hyper(Field::Niche),
        Block::Hyper(Field::GevMu),
        Block::Hyper(Field::GevSigma),
    ];

    pub fn name(self) -> String {
        match self {
            Block::Field(f) => f.name().to_string(),
            Block::Scalars(b) => b.name().to_string(),
            Block::Hyper(f) => format!("hyper_{}", &f.name()[2..]),
        }
    }

    /// RNG stream of the block; streams are disjoint for a given seed.
    pub fn stream(self) -> u64 {
        Block::SWEEP.iter().position(|&b| b == self).expect("block in sweep") as u64
    }
}

/// Per-iteration record of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub burn_in: bool,
    /// Acceptance flag per block in sweep order; `None` for inactive blocks.
    pub accepted: [Option<bool>; N_BLOCKS],
    pub scalars: [f64; 12],
    /// `(σ, κ)` per field in storage order.
    pub hyper: [f64; 10],
    pub log_post: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSummary {
    pub name: String,
    pub active: bool,
    /// Post-burn-in acceptance rate (burn-in rate if nothing was kept).
    pub acceptance: Option<f64>,
    pub final_step: f64,
}

impl BlockSummary {
    /// Acceptance outside `[0.1, 0.9]` after adaptation.
    pub fn flagged(&self) -> bool {
        self.acceptance.is_some_and(|a| !(0.1..=0.9).contains(&a))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub draws: PosteriorDraws,
    pub trace: Vec<TraceRow>,
    pub blocks: Vec<BlockSummary>,
    /// ESS of each monitored series over the post-burn-in trace.
    pub ess: Vec<(String, Ess)>,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub runtime_secs: f64,
    /// Updates rejected because a gradient was not finite.
    pub nonfinite_rejections: u64,
    pub final_state: LatentState,
}

/// Names of the monitored series, matching the `scalars`, `hyper` and
/// `log_post` columns of [`TraceRow`].
pub fn monitored_names() -> Vec<String> {
    let mut out: Vec<String> = crate::model::ScalarId::ALL.iter().map(|s| s.name().to_string()).collect();
    for f in Field::ALL {
        out.push(format!("sigma_{}", &f.name()[2..]));
        out.push(format!("kappa_{}", &f.name()[2..]));
    }
    out.push("log_post".into());
    out
}

impl TraceRow {
    pub fn monitored(&self) -> Vec<f64> {
        let mut v = self.scalars.to_vec();
        v.extend_from_slice(&self.hyper);
        v.push(self.log_post);
        v
    }
}

/// Log-posterior at the current state, with gradients once requested.
struct Current {
    lp: Option<f64>,
    grads: Option<[Vec<f64>; 5]>,
}

impl Current {
    fn stale() -> Self {
        Current { lp: None, grads: None }
    }
}

struct Sampler<'a> {
    model: &'a Model,
    state: LatentState,
    priors: Vec<FieldPrior>,
    zero_sums: Vec<ZeroSum>,
    /// Curvature preconditioners; `None` uses the field prior.
    dense: [Option<(DenseCov, ZeroSum)>; 5],
    current: Current,
    rngs: Vec<ChaCha8Rng>,
    field_steps: [StepAdapter; 5],
    scalar_walks: Vec<RandomWalk>,
    hyper_walks: Vec<RandomWalk>,
    nonfinite: u64,
    compensate_sharing: bool,
}

fn zero_sum_of(p: &FieldPrior) -> ZeroSum {
    ZeroSum::from_parts(p.constraint.w_ones.clone(), p.constraint.total_var)
}

impl<'a> Sampler<'a> {
    fn new(model: &'a Model, cfg: &'a ChainConfig, state: LatentState) -> Result<Self> {
        let priors = model.priors(&state)?;
        let zero_sums = priors.iter().map(zero_sum_of).collect();
        let rngs = Block::SWEEP
            .iter()
            .map(|b| {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
                r.set_stream(b.stream());
                r
            })
            .collect();
        let s = &cfg.steps;
        let field_step = |f: Field| match f {
            Field::Pref => s.pref,
            Field::Year => s.year,
            Field::Niche => s.niche,
            Field::GevMu => s.gev_mu,
            Field::GevSigma => s.gev_sigma,
        };
        let field_steps = Field::ALL.map(|f| StepAdapter::new(field_step(f), cfg.target_mala));
        let scalar_walks = ScalarBlock::ALL
            .iter()
            .map(|&b| {
                let step = match b {
                    ScalarBlock::Count => s.count_scalars,
                    ScalarBlock::Sharing => s.sharing_scalars,
                    ScalarBlock::Gev => s.gev_scalars,
                };
                let dim = model.free_scalars(b).len().max(1);
                RandomWalk::new(dim, step, cfg.target_rw, cfg.adapt_scalar_covariance)
            })
            .collect();
        let hyper_walks = Field::ALL
            .iter()
            .map(|_| RandomWalk::new(2, s.hyper, cfg.target_rw, cfg.adapt_scalar_covariance))
            .collect();
        Ok(Sampler {
            model,
            state,
            priors,
            zero_sums,
            dense: Default::default(),
            current: Current::stale(),
            rngs,
            field_steps,
            scalar_walks,
            hyper_walks,
            nonfinite: 0,
            compensate_sharing: cfg.compensate_sharing,
        })
    }

    fn ensure_grads(&mut self) -> Result<()> {
        if self.current.grads.is_none() {
            let (lp, g) = self.model.log_posterior_grad(&self.state, &self.priors)?;
            self.current = Current { lp: Some(lp.total()), grads: Some(g) };
        }
        Ok(())
    }

    fn ensure_lp(&mut self) -> Result<f64> {
        if let Some(lp) = self.current.lp {
            return Ok(lp);
        }
        let lp = self.model.log_posterior(&self.state, &self.priors)?.total();
        self.current.lp = Some(lp);
        Ok(lp)
    }

    /// Returns `(accepted, acceptance probability)`, or `None` when inactive.
    fn update(&mut self, block: Block, adapting: bool) -> Result<Option<(bool, f64)>> {
        let out = match block {
            Block::Field(f) => self.field_update(f)?,
            Block::Scalars(b) => self.scalar_update(b)?,
            Block::Hyper(f) => self.hyper_update(f)?,
        };
        if let (Some((_, a)), true) = (out, adapting) {
            match block {
                Block::Field(f) => {
                    self.field_steps[f.index()].update(a);
                }
                Block::Scalars(b) => {
                    let x = self.free_values(b);
                    self.scalar_walks[scalar_index(b)].adapt(&x, a);
                }
                Block::Hyper(f) => {
                    let h = self.state.hyper[f.index()];
                    self.hyper_walks[f.index()].adapt(&[h.sigma.ln(), h.kappa.ln()], a);
                }
            }
        }
        Ok(out)
    }

    fn field_update(&mut self, f: Field) -> Result<Option<(bool, f64)>> {
        if !self.model.field_active(f) {
            return Ok(None);
        }
        self.ensure_grads()?;
        let grads = self.current.grads.take().expect("gradients present");
        let mut current = Eval { log_pi: self.current.lp.expect("lp present"), grad: grads[f.index()].clone() };
        let mut x = self.state.field(f).to_vec();
        let mut scratch = self.state.clone();
        let mut last: Option<(f64, [Vec<f64>; 5])> = None;
        let model = self.model;
        let priors = &self.priors;
        let target = |y: &[f64]| -> Result<Eval> {
            scratch.fields[f.index()].copy_from_slice(y);
            let (lp, g) = model.log_posterior_grad(&scratch, priors)?;
            let e = Eval { log_pi: lp.total(), grad: g[f.index()].clone() };
            last = Some((e.log_pi, g));
            Ok(e)
        };
        let delta = self.field_steps[f.index()].delta;
        let (w, zs): (&dyn Preconditioner, &ZeroSum) = match &self.dense[f.index()] {
            Some((w, zs)) => (w, zs),
            None => (&self.priors[f.index()].factor, &self.zero_sums[f.index()]),
        };
        let step = mala_step(
            &mut x,
            &mut current,
            target,
            delta,
            w,
            Some(zs),
            &mut self.rngs[Block::Field(f).stream() as usize],
        )?;
        if step.nonfinite {
            self.nonfinite += 1;
        }
        if step.accepted {
            *self.state.field_mut(f) = x;
            let (lp, g) = last.expect("accepted proposal was evaluated");
            self.current = Current { lp: Some(lp), grads: Some(g) };
        } else {
            self.current.grads = Some(grads);
        }
        Ok(Some((step.accepted, step.acceptance_probability())))
    }

    /// Re-estimates the curvature preconditioner of every active field and
    /// restarts its step adaptation. A field whose estimate fails keeps its
    /// previous preconditioner.
    fn refresh_preconditioners(&mut self) {
        for f in Field::ALL {
            if !self.model.field_active(f) || self.model.geometry(f).dim() > MAX_DENSE_DIM {
                continue;
            }
            let built = curvature_preconditioner(self.model, &self.state, &self.priors, f)
                .and_then(|w| ZeroSum::new(&w).map(|zs| (w, zs)));
            match built {
                Ok(pair) => {
                    let d = pair.0.dim() as f64;
                    self.dense[f.index()] = Some(pair);
                    self.field_steps[f.index()].restart(RESTART_SCALE * d.powf(-1.0 / 6.0));
                }
                Err(e) => warn!("keeping the previous preconditioner of {}: {e}", f.name()),
            }
        }
    }

    /// Translates the GEV location field and intercept of `trial` by the
    /// change in [`Model::sharing_offsets`] from the current state. The
    /// shift depends only on the scalars before and after, so the map is a
    /// unit-Jacobian bijection whose inverse is the reverse proposal; the
    /// symmetric walk keeps its plain Metropolis ratio.
    fn compensate(&self, trial: &mut LatentState) {
        let before = self.model.sharing_offsets(&self.state);
        let after = self.model.sharing_offsets(trial);
        let mut shift: Vec<f64> = before.iter().zip(&after).map(|(b, a)| b - a).collect();
        let mean = shift.iter().sum::<f64>() / shift.len() as f64;
        shift.iter_mut().for_each(|v| *v -= mean);
        for (x, d) in trial.field_mut(Field::GevMu).iter_mut().zip(&shift) {
            *x += d;
        }
        if !self.model.scalar_frozen(ScalarId::Beta0GevMu) {
            trial.scalars.beta0_gev_mu += mean;
        }
    }

    fn free_values(&self, b: ScalarBlock) -> Vec<f64> {
        self.model.free_scalars(b).iter().map(|&id| self.state.scalars.get(id)).collect()
    }

    fn scalar_update(&mut self, b: ScalarBlock) -> Result<Option<(bool, f64)>> {
        let ids = self.model.free_scalars(b);
        if ids.is_empty() {
            return Ok(None);
        }
        let lp0 = self.ensure_lp()?;
        let x = self.free_values(b);
        let rng = &mut self.rngs[Block::Scalars(b).stream() as usize];
        let y = self.scalar_walks[scalar_index(b)].propose(&x, rng);
        let u: f64 = rng.random();
        let mut trial = self.state.clone();
        for (&id, &v) in ids.iter().zip(&y) {
            trial.scalars.set(id, v);
        }
        if b == ScalarBlock::Sharing && self.compensate_sharing && self.model.field_active(Field::GevMu) {
            self.compensate(&mut trial);
        }
        let lp1 = self.model.log_posterior(&trial, &self.priors)?.total();
        let a = accept_prob(lp1 - lp0);
        let accepted = u < a;
        if accepted {
            self.state = trial;
            self.current = Current { lp: Some(lp1), grads: None };
        }
        Ok(Some((accepted, a)))
    }

    fn hyper_update(&mut self, f: Field) -> Result<Option<(bool, f64)>> {
        if !self.model.field_active(f) {
            return Ok(None);
        }
        let i = f.index();
        let mv = hyper_update(
            self.model,
            f,
            self.state.field(f),
            &self.priors[i],
            &self.hyper_walks[i],
            &mut self.rngs[Block::Hyper(f).stream() as usize],
        )?;
        if let Some(prior) = mv.prior {
            self.state.hyper[i] = prior.factor.hyper();
            self.zero_sums[i] = zero_sum_of(&prior);
            self.priors[i] = prior;
            self.current = Current::stale();
        }
        Ok(Some((mv.accepted, mv.probability)))
    }

    fn freeze(&mut self) {
        self.field_steps.iter_mut().for_each(StepAdapter::freeze);
        self.scalar_walks.iter_mut().for_each(RandomWalk::freeze);
        self.hyper_walks.iter_mut().for_each(RandomWalk::freeze);
    }

    fn final_step(&self, block: Block) -> f64 {
        match block {
            Block::Field(f) => self.field_steps[f.index()].delta,
            Block::Scalars(b) => self.scalar_walks[scalar_index(b)].step.delta,
            Block::Hyper(f) => self.hyper_walks[f.index()].step.delta,
        }
    }
}

/// Result of one hyperparameter update.
#[derive(Debug, Clone)]
pub struct HyperMove {
    pub accepted: bool,
    pub probability: f64,
    /// Field prior under newly accepted hyperparameters; `None` when the
    /// hyperparameters did not change.
    pub prior: Option<FieldPrior>,
}

/// Metropolis update of `(σ, κ)` for field `f` given the centred field `x`.
///
/// The walk runs on `(log σ, log κ)`; the target is the constrained Vecchia
/// density of `x`, the PC prior and the log-scale Jacobian `σκ`. A proposal
/// whose factor cannot be built is rejected.
pub fn hyper_update<R: Rng + ?Sized>(
    model: &Model,
    f: Field,
    x: &[f64],
    prior: &FieldPrior,
    walk: &RandomWalk,
    rng: &mut R,
) -> Result<HyperMove> {
    let h0 = prior.factor.hyper();
    let x0 = [h0.sigma.ln(), h0.kappa.ln()];
    let y = walk.propose(&x0, rng);
    let u: f64 = rng.random();
    if y == x0 {
        // a null move; exp(ln σ) need not round-trip, so keep the prior as is
        return Ok(HyperMove { accepted: true, probability: 1.0, prior: None });
    }
    let reject = HyperMove { accepted: false, probability: 0.0, prior: None };
    let pc = model.pc_prior(f);
    let cur = prior.log_density(x)? + pc.log_density(&h0)? + h0.sigma.ln() + h0.kappa.ln();
    let Ok(h1) = GpHyper::new(y[0].exp(), y[1].exp()) else {
        return Ok(reject);
    };
    let Ok(prior1) = model.field_prior(f, h1) else {
        return Ok(reject);
    };
    let prop = prior1.log_density(x)? + pc.log_density(&h1)? + y[0] + y[1];
    let probability = accept_prob(prop - cur);
    let accepted = u < probability;
    Ok(HyperMove { accepted, probability, prior: accepted.then_some(prior1) })
}

fn scalar_index(b: ScalarBlock) -> usize {
    ScalarBlock::ALL.iter().position(|&x| x == b).expect("known block")
}

fn accept_prob(log_ratio: f64) -> f64 {
    if log_ratio.is_nan() {
        0.0
    } else {
        log_ratio.min(0.0).exp()
    }
}

/// Runs one chain of `cfg.iterations` sweeps from `init` (or the model's
/// default start) and keeps every `thin`-th post-burn-in state.
/// Fewest arrival values for which the GEV scalars start from an iid fit.
const MIN_START_ARRIVALS: usize = 20;

/// Zero fields with intercepts matched to the data: count intercepts from
/// pooled rates, GEV scalars from an iid fit to the arrival values.
///
/// Starting every scalar at zero can leave the chain in a low-probability
/// mode with ξ near its lower bound.
pub fn starting_state(model: &Model, seed: u64) -> Result<LatentState> {
    let mut s = model.initial_state();
    let tables = model.tables();
    let free = |id| !model.scalar_frozen(id);
    let (mut ckl, mut spc, mut exposure) = (0.0, 0.0, 0.0);
    for c in 0..tables.n_cells() {
        if let Some(n) = tables.n_ckl[c] {
            ckl += n as f64;
            spc += tables.n_spc[c].unwrap_or(0) as f64;
            exposure += model.log_area()[c % tables.n_pixels].exp();
        }
    }
    if free(ScalarId::Beta0Ckl) && ckl > 0.0 {
        s.scalars.beta0_ckl = (ckl / exposure).ln();
    }
    if free(ScalarId::Beta0Spc) && spc > 0.0 && spc < ckl {
        s.scalars.beta0_spc = (-(-spc / ckl).ln_1p()).ln();
    }
    let bbs: f64 = tables.bbs.iter().map(|o| o.count as f64).sum();
    let weight: f64 = tables.bbs.iter().flat_map(|o| o.weights.iter().map(|w| w.1)).sum();
    if free(ScalarId::Beta0Bbs) && bbs > 0.0 && weight > 0.0 {
        s.scalars.beta0_bbs = (bbs / weight).ln();
    }

    let z: Vec<f64> = tables.z.iter().flatten().copied().collect();
    if z.len() < MIN_START_ARRIVALS {
        return Ok(s);
    }
    let fit = fit_iid_gev(&z, &GevFitConfig::default(), seed)?;
    // log μ at β₀ᵘ = 0, averaged over the arrival cells
    let mut base = 0.0;
    let mut n = 0usize;
    for (c, zc) in tables.z.iter().enumerate() {
        if let (Some(_), Some(inv_d)) = (zc, model.inv_duration()[c]) {
            let (mu, _, _) = model.gev_params(&s, c % tables.n_pixels, c / tables.n_pixels, inv_d);
            base += mu.ln();
            n += 1;
        }
    }
    if free(ScalarId::Beta0GevMu) && n > 0 && fit.mu > 0.0 {
        s.scalars.beta0_gev_mu = fit.mu.ln() - base / n as f64;
    }
    if free(ScalarId::Beta0GevSigma) {
        s.scalars.beta0_gev_sigma = fit.sigma.ln();
    }
    if free(ScalarId::Xi) {
        s.scalars.xi = fit.xi;
    }
    // a pooled fit can leave a few arrivals outside the support
    let ok = model.log_posterior(&s, &model.priors(&s)?).is_ok_and(|lp| lp.total().is_finite());
    Ok(if ok { s } else { model.initial_state() })
}

pub fn run_chain(model: &Model, cfg: &ChainConfig, init: Option<LatentState>) -> Result<ChainOutput> {
    if cfg.thin == 0 {
        return Err(Error::Config("thin must be at least 1".into()));
    }
    if cfg.iterations < cfg.burn_in {
        return Err(Error::Config(format!(
            "iterations ({}) must not be below burn_in ({})",
            cfg.iterations, cfg.burn_in
        )));
    }
    let mut state = match init {
        Some(s) => s,
        None => starting_state(model, cfg.seed ^ START_SEED_MIX)?,
    };
    state.check(model.n_pixels(), model.n_years())?;
    for f in Field::ALL {
        if !model.field_active(f) && state.field(f).iter().any(|&v| v != 0.0) {
            warn!("{} is inactive; resetting its start values to zero", f.name());
            state.field_mut(f).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let start = Instant::now();
    let mut s = Sampler::new(model, cfg, state)?;
    let adapt_until = cfg.adapt_until();
    let mut draws = PosteriorDraws::new(model.n_pixels(), model.n_years());
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut kept = [(0usize, 0usize); N_BLOCKS];
    let mut burn = [(0usize, 0usize); N_BLOCKS];
    let report_every = (cfg.iterations / 10).max(1);

    for it in 0..cfg.iterations {
        if it == adapt_until {
            s.freeze();
        }
        if cfg.preconditioner == Preconditioning::Curvature && is_refresh_point(it, adapt_until) {
            s.refresh_preconditioners();
        }
        let adapting = it < adapt_until;
        let mut accepted = [None; N_BLOCKS];
        for (k, &block) in Block::SWEEP.iter().enumerate() {
            let r = s.update(block, adapting).map_err(|e| Error::Chain {
                iteration: it,
                block: block.name(),
                source: Box::new(e),
            })?;
            if let Some((acc, _)) = r {
                accepted[k] = Some(acc);
                let slot = if it < cfg.burn_in { &mut burn[k] } else { &mut kept[k] };
                slot.0 += acc as usize;
                slot.1 += 1;
            }
        }
        let lp = s.ensure_lp().map_err(|e| Error::Chain { iteration: it, block: "log_post".into(), source: Box::new(e) })?;
        let st = &s.state;
        trace.push(TraceRow {
            iteration: it,
            burn_in: it < cfg.burn_in,
            accepted,
            scalars: st.scalars.to_array(),
            hyper: std::array::from_fn(|j| if j % 2 == 0 { st.hyper[j / 2].sigma } else { st.hyper[j / 2].kappa }),
            log_post: lp,
        });
        if it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0 {
            debug_assert!(st.check(model.n_pixels(), model.n_years()).is_ok());
            draws.draws.push(st.clone());
        }
        if (it + 1) % report_every == 0 {
            info!("iteration {}/{}: log posterior {lp:.3}", it + 1, cfg.iterations);
        }
    }

    let blocks = Block::SWEEP
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let (a, n) = if kept[k].1 > 0 { kept[k] } else { burn[k] };
            BlockSummary {
                name: b.name(),
                active: n > 0,
                acceptance: (n > 0).then(|| a as f64 / n as f64),
                final_step: s.final_step(b),
            }
        })
        .collect::<Vec<_>>();
    for b in &blocks {
        if b.flagged() && cfg.iterations > cfg.burn_in {
            warn!("block {} accepted {:.3} of proposals after adaptation", b.name, b.acceptance.unwrap_or(0.0));
        }
    }

    let post: Vec<&TraceRow> = trace.iter().filter(|r| !r.burn_in).collect();
    let mut ess_out = Vec::new();
    if post.len() >= super::ess::MIN_ESS_LEN {
        for (j, name) in monitored_names().into_iter().enumerate() {
            let series: Vec<f64> = post.iter().map(|r| r.monitored()[j]).collect();
            if let Ok(e) = ess(&series) {
                ess_out.push((name, e));
            }
        }
    }

    Ok(ChainOutput {
        draws,
        trace,
        blocks,
        ess: ess_out,
        seed: cfg.seed,
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        runtime_secs: start.elapsed().as_secs_f64(),
        nonfinite_rejections: s.nonfinite,
        final_state: s.state,
    })
}
