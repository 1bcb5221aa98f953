use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adapt::RandomWalk;
use crate::dist::{gev_logpdf_grad, GevParams};
use crate::{Error, Result};

/// Posterior summary of an iid GEV fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GevFit {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
    pub sd_mu: f64,
    pub sd_sigma: f64,
    pub sd_xi: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GevFitConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub xi_bounds: (f64, f64),
    /// Variance of the normal priors on μ, log σ and ξ.
    pub prior_var: f64,
}

impl Default for GevFitConfig {
    fn default() -> Self {
        GevFitConfig { iterations: 12_000, burn_in: 4_000, xi_bounds: (-1.0, 0.5), prior_var: 100.0 }
    }
}

fn log_post(data: &[f64], th: &[f64], cfg: &GevFitConfig) -> f64 {
    let (mu, ls, xi) = (th[0], th[1], th[2]);
    if !(xi > cfg.xi_bounds.0 && xi < cfg.xi_bounds.1) {
        return f64::NEG_INFINITY;
    }
    let p = GevParams { mu, sigma: ls.exp(), xi };
    let mut lp = -(mu * mu + ls * ls + xi * xi) / (2.0 * cfg.prior_var);
    for &z in data {
        lp += gev_logpdf_grad(z, &p).logpdf;
        if lp == f64::NEG_INFINITY {
            break;
        }
    }
    lp
}

/// Fits `GEV(μ, σ, ξ)` to iid data with an adaptive random-walk sampler on
/// `(μ, log σ, ξ)`, started at the Gumbel moment estimates.
pub fn fit_iid_gev(data: &[f64], cfg: &GevFitConfig, seed: u64) -> Result<GevFit> {
    if data.len() < 2 || data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("GEV fit needs at least two finite values".into()));
    }
    if cfg.iterations <= cfg.burn_in {
        return Err(Error::Config("GEV fit needs iterations above burn_in".into()));
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let sd = (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sigma0 = sd * 6f64.sqrt() / std::f64::consts::PI;
    let mut th = vec![mean - 0.577_215_664_901_532_9 * sigma0, sigma0.ln(), 0.0];
    let mut lp = log_post(data, &th, cfg);
    if !lp.is_finite() {
        return Err(Error::Domain("GEV fit start point has zero density".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rw = RandomWalk::new(3, 0.1 / n.sqrt(), 0.3, true);
    let mut sums = [[0.0; 2]; 3];
    let mut accepted = 0usize;
    for it in 0..cfg.iterations {
        if it == cfg.burn_in {
            rw.freeze();
        }
        let y = rw.propose(&th, &mut rng);
        let ly = log_post(data, &y, cfg);
        let a = if ly.is_nan() { 0.0 } else { (ly - lp).min(0.0).exp() };
        if rng.random::<f64>() < a {
            th = y;
            lp = ly;
            if it >= cfg.burn_in {
                accepted += 1;
            }
        }
        rw.adapt(&th, a);
        if it >= cfg.burn_in {
            let vals = [th[0], th[1].exp(), th[2]];
            for (s, v) in sums.iter_mut().zip(vals) {
                s[0] += v;
                s[1] += v * v;
            }
        }
    }
    let kept = (cfg.iterations - cfg.burn_in) as f64;
    let m = sums.map(|s| s[0] / kept);
    let sd = sums.map(|s| (s[1] / kept - (s[0] / kept).powi(2)).max(0.0).sqrt());
    Ok(GevFit {
        mu: m[0],
        sigma: m[1],
        xi: m[2],
        sd_mu: sd[0],
        sd_sigma: sd[1],
        sd_xi: sd[2],
        acceptance: accepted as f64 / kept,
    })
}
