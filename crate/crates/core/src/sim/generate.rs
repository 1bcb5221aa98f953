use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};

use crate::config::{Config, ModelConfig, SimConfig, SimTruth};
use crate::dist::{z_to_day, GevParams};
use crate::grid::{
    build_tables, BbsCountRecord, ChecklistRecord, IngestReport, Inputs, LandCoverRecord, NaoRecord,
    OccurrenceRecord, PixelGrid, PixelRow, Projection, ResponseTables, RouteDef, SegmentRecord,
};
use crate::mcmc::ZeroSum;
use crate::model::{Field, LatentState, Model, Scalars};
use crate::stats::median;
use crate::vecchia::{Coord, GpHyper, VecchiaGeometry};
use crate::{Error, Result};

/// Pixels and years of the full-size study region.
pub const FULL_PIXELS: usize = 1268;
pub const FULL_YEARS: usize = 21;
const FULL_COLUMNS: usize = 36;

/// Reference point of the simulated region.
const CENTRE: (f64, f64) = (-75.0, 43.0);
/// Area fraction of pixels on the lattice border.
const BORDER_AREA: f64 = 0.6;
/// Expected checklist counts above this are treated as overflow.
const MAX_LAMBDA: f64 = 1e7;
/// Consecutive rejections tolerated when truncating a GEV draw to `z > 0`.
const MAX_REJECTIONS: usize = 10_000;
/// Rejection rates above this are warned about.
const REJECTION_WARN: f64 = 0.05;

/// A fully simulated data set with its generating state.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub grid: PixelGrid,
    pub routes: Vec<RouteDef>,
    pub inputs: Inputs,
    pub tables: ResponseTables,
    pub report: IngestReport,
    pub truth: LatentState,
    pub truncation: Truncation,
}

/// Rejections needed to keep simulated arrivals at `z > 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Truncation {
    pub accepted: u64,
    pub rejected: u64,
}

impl Truncation {
    pub fn rate(&self) -> f64 {
        let n = self.accepted + self.rejected;
        if n == 0 {
            0.0
        } else {
            self.rejected as f64 / n as f64
        }
    }
}

/// Pixel rows and years of the simulated region.
///
/// Pixels sit on a `cell_km` lattice around a fixed reference point; those
/// on the border get a reduced area, as clipped pixels do in real grids.
pub fn simulate_layout(cfg: &SimConfig, cell_km: f64) -> (Vec<PixelRow>, Vec<i32>) {
    let (cols, n, n_years) = if cfg.full_scale {
        (FULL_COLUMNS, FULL_PIXELS, FULL_YEARS)
    } else {
        (cfg.nx, cfg.nx * cfg.ny, cfg.n_years)
    };
    let rows = n.div_ceil(cols);
    let ij: Vec<(usize, usize)> = (0..n).map(|k| (k % cols, k / cols)).collect();
    let mx = ij.iter().map(|&(i, _)| i as f64).sum::<f64>() / n as f64;
    let my = ij.iter().map(|&(_, j)| j as f64).sum::<f64>() / n as f64;
    let proj = Projection::new(CENTRE.0, CENTRE.1);
    let last_row_len = n - (rows - 1) * cols;
    let pixels = ij
        .iter()
        .enumerate()
        .map(|(id, &(i, j))| {
            let (lon, lat) = proj.inverse((i as f64 - mx) * cell_km, (j as f64 - my) * cell_km);
            let border = i == 0 || j == 0 || i + 1 == cols || j + 1 == rows || (j + 2 == rows && i >= last_row_len);
            let area = cell_km * cell_km * if border { BORDER_AREA } else { 1.0 };
            PixelRow { pixel_id: id, lon, lat, area_km2: area }
        })
        .collect();
    let years = (0..n_years as i32).map(|t| cfg.first_year + t).collect();
    (pixels, years)
}

/// Fields from their Vecchia priors, conditioned on a zero sum, with the
/// configured scalars. A field with `σ = 0` is identically zero.
pub fn simulate_latents<R: Rng + ?Sized>(
    spatial: &Arc<VecchiaGeometry>,
    temporal: &Arc<VecchiaGeometry>,
    truth: &SimTruth,
    rng: &mut R,
) -> Result<LatentState> {
    let hyper: [GpHyper; 5] = std::array::from_fn(|j| GpHyper { sigma: truth.sigma[j], kappa: truth.kappa[j] });
    let mut state = LatentState::zeros(spatial.dim(), temporal.dim(), hyper);
    for f in Field::ALL {
        let h = hyper[f.index()];
        if h.sigma == 0.0 {
            continue;
        }
        let geom = if f.is_spatial() { spatial } else { temporal };
        let factor = geom.factor(GpHyper::new(h.sigma, h.kappa)?)?;
        let x = factor.sample(rng);
        let zs = ZeroSum::new(&factor)?;
        let s: f64 = x.iter().sum();
        *state.field_mut(f) = x.iter().zip(&zs.w_ones).map(|(xi, w)| xi - w * s / zs.total).collect();
        // rounding residue of the kriging correction
        crate::vecchia::center_in_place(state.field_mut(f));
    }
    state.scalars = scalars_from(truth);
    Ok(state)
}

pub fn scalars_from(t: &SimTruth) -> Scalars {
    Scalars {
        beta0_bbs: t.beta0_bbs,
        beta0_ckl: t.beta0_ckl,
        beta0_spc: t.beta0_spc,
        beta_act: t.beta_act,
        beta0_gev_mu: t.beta0_gev_mu,
        beta1_gev_mu: t.beta1_gev_mu,
        beta0_gev_sigma: t.beta0_gev_sigma,
        theta_eff: t.theta_eff,
        theta_pref: t.theta_pref,
        theta_act: t.theta_act,
        theta_niche_gev: t.theta_niche_gev,
        xi: t.xi,
    }
}

/// Checklist count with mean `λ`: Poisson when `r` is `None`, otherwise
/// Poisson with a Gamma(shape `r`, scale `λ/r`) mean, giving variance
/// `λ + λ²/r`.
pub fn sample_checklist_count<R: Rng + ?Sized>(lambda: f64, r: Option<f64>, rng: &mut R) -> Result<u64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Simulation(format!("invalid checklist intensity {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    let mean = match r {
        Some(r) => Gamma::new(r, lambda / r)
            .map_err(|e| Error::Simulation(format!("gamma(shape {r}, scale {}): {e}", lambda / r)))?
            .sample(rng),
        None => lambda,
    };
    if mean <= 0.0 {
        return Ok(0);
    }
    let n = Poisson::new(mean).map_err(|e| Error::Simulation(format!("poisson({mean}): {e}")))?.sample(rng);
    Ok(n as u64)
}

/// A GEV draw truncated to `z > 0` by rejection; returns the draw and the
/// number of rejections.
pub fn sample_positive_gev<R: Rng + ?Sized>(g: &GevParams, rng: &mut R) -> Result<(f64, u64)> {
    for rejected in 0..MAX_REJECTIONS {
        let z = g.sample(rng);
        if z > 0.0 && z.is_finite() {
            return Ok((z, rejected as u64));
        }
    }
    Err(Error::Simulation(format!(
        "GEV({}, {}, {}) put almost no mass above zero",
        g.mu, g.sigma, g.xi
    )))
}

/// Raw route layout: each route covers one to three horizontally adjacent
/// pixels with random weights.
fn simulate_segments<R: Rng + ?Sized>(n_routes: usize, grid: &PixelGrid, rng: &mut R) -> Vec<SegmentRecord> {
    let d = grid.n_pixels();
    let mut out = Vec::new();
    for r in 0..n_routes as u64 {
        let start = rng.random_range(0..d);
        let want = rng.random_range(1..=3usize);
        let mut pix = vec![start];
        let px = grid.pixels()[start];
        for step in 1..want {
            let (lon, lat) = grid.projection().inverse(px.x_km + step as f64 * grid.cell_km(), px.y_km);
            match grid.locate(lon, lat) {
                Some(q) => pix.push(q),
                None => break,
            }
        }
        let raw: Vec<f64> = pix.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for (&p, w) in pix.iter().zip(raw) {
            out.push(SegmentRecord { route_id: r, pixel_id: p, weight: w / total });
        }
    }
    out
}

/// Land-cover proportions tied to the niche field: developed land rises
/// and forest falls with the niche.
fn simulate_landcover<R: Rng + ?Sized>(niche: &[f64], rng: &mut R) -> Vec<LandCoverRecord> {
    const LOADINGS: [f64; 4] = [1.0, -1.0, 0.5, 0.0];
    niche
        .iter()
        .enumerate()
        .map(|(p, &x)| {
            let s: Vec<f64> = LOADINGS
                .iter()
                .map(|a| (a * x + 0.5 * rng.sample::<f64, _>(StandardNormal)).exp())
                .collect();
            let tot: f64 = s.iter().sum();
            LandCoverRecord {
                pixel_id: p,
                developed: s[0] / tot,
                forest: s[1] / tot,
                vegetation: s[2] / tot,
                water: s[3] / tot,
            }
        })
        .collect()
}

/// Raw observation records drawn from `state` on `grid`.
///
/// Checklists sit at pixel barycentres. Each cell with presences gets its
/// first-arrival day from the cell's GEV truncated to `z > 0`; further
/// presences fall later in the year. The records go through the same
/// aggregation as real inputs.
pub fn simulate_data<R: Rng + ?Sized>(
    state: &LatentState,
    grid: &PixelGrid,
    pixels: Vec<PixelRow>,
    nao: &[f64],
    sim: &SimConfig,
    model_cfg: &ModelConfig,
    rng: &mut R,
) -> Result<(Inputs, Truncation)> {
    let (d, t_n) = (grid.n_pixels(), grid.n_years());
    state.check(d, t_n)?;
    if nao.len() != t_n {
        return Err(Error::Dimension { expected: t_n, got: nao.len() });
    }
    let model = Model::new(grid, ResponseTables::empty(d, t_n, nao.to_vec()), model_cfg)?;
    let sc = &state.scalars;
    let mut inputs = Inputs {
        pixels,
        nao: grid.years().iter().zip(nao).map(|(&year, &value)| NaoRecord { year, value }).collect(),
        ..Inputs::default()
    };
    let mut trunc = Truncation::default();
    let ln_med = sim.duration_median_min.ln();
    for (t, &year) in grid.years().iter().enumerate() {
        for (p, px) in grid.pixels().iter().enumerate() {
            let x_year = state.field(Field::Year)[t];
            let log_lambda = sc.beta0_ckl + x_year + state.field(Field::Pref)[p] + model.log_area()[p];
            let lambda = log_lambda.exp();
            if !(lambda <= MAX_LAMBDA) {
                return Err(Error::Simulation(format!(
                    "checklist intensity {lambda:.3e} overflows at pixel {p}, year {year}"
                )));
            }
            let n_ckl = sample_checklist_count(lambda, sim.r, rng)?;
            if n_ckl == 0 {
                continue;
            }
            let cell_log_med = ln_med + sim.duration_cell_sd * rng.sample::<f64, _>(StandardNormal);
            let durations: Vec<f64> = (0..n_ckl)
                .map(|_| (cell_log_med + sim.duration_checklist_sd * rng.sample::<f64, _>(StandardNormal)).exp())
                .collect();
            for &duration_min in &durations {
                inputs.checklists.push(ChecklistRecord { lon: px.lon, lat: px.lat, year, duration_min });
            }
            let inv_d = model.inv_duration_of(median(&durations).expect("at least one checklist"));
            let p_spc = model.presence_probability(state, p, inv_d);
            let n_spc = Binomial::new(n_ckl, p_spc)
                .map_err(|e| Error::Simulation(format!("presence probability {p_spc} at pixel {p}, year {year}: {e}")))?
                .sample(rng);
            if n_spc == 0 {
                continue;
            }
            let (mu, sigma, xi) = model.gev_params_for_year(state, p, x_year, nao[t], Some(inv_d));
            let g = GevParams::new(mu, sigma, xi)
                .map_err(|e| Error::Simulation(format!("pixel {p}, year {year}: {e}")))?;
            let (z, rejected) = sample_positive_gev(&g, rng)
                .map_err(|e| Error::Simulation(format!("pixel {p}, year {year}: {e}")))?;
            trunc.accepted += 1;
            trunc.rejected += rejected;
            let first = z_to_day(z);
            inputs.occurrences.push(OccurrenceRecord { lon: px.lon, lat: px.lat, year, day: first, present: 1 });
            for _ in 1..n_spc {
                let day = first + rng.random::<f64>() * (366.0 - first);
                inputs.occurrences.push(OccurrenceRecord { lon: px.lon, lat: px.lat, year, day, present: 1 });
            }
        }
    }
    if trunc.rate() > REJECTION_WARN {
        warn!("{:.1}% of simulated arrivals fell at z <= 0 and were redrawn", 100.0 * trunc.rate());
    }

    inputs.segments = simulate_segments(sim.n_routes, grid, rng);
    let niche = state.field(Field::Niche);
    for r in 0..sim.n_routes as u64 {
        let segs: Vec<(usize, f64)> =
            inputs.segments.iter().filter(|s| s.route_id == r).map(|s| (s.pixel_id, s.weight)).collect();
        for &year in grid.years() {
            if !rng.random_bool(sim.route_survey_prob.clamp(0.0, 1.0)) {
                continue;
            }
            let stops: u32 = if rng.random_bool(0.8) { 50 } else { rng.random_range(35..50) };
            let intensity: f64 =
                segs.iter().map(|&(p, w)| w * stops as f64 / 50.0 * (sc.beta0_bbs + niche[p]).exp()).sum();
            let count = if intensity > 0.0 {
                Poisson::new(intensity)
                    .map_err(|e| Error::Simulation(format!("route {r}, year {year}: {e}")))?
                    .sample(rng) as u64
            } else {
                0
            };
            inputs.bbs.push(BbsCountRecord { route_id: r, year, count, stops });
        }
    }
    inputs.landcover = Some(simulate_landcover(niche, rng));
    Ok((inputs, trunc))
}

/// Geometry of the simulated region under the configured model.
pub fn simulation_grid(cfg: &Config) -> Result<(PixelGrid, Vec<PixelRow>)> {
    let (pixels, years) = simulate_layout(&cfg.sim, cfg.grid.cell_km);
    let grid = PixelGrid::new(pixels.clone(), years, cfg.grid.cell_km)?;
    Ok((grid, pixels))
}

fn geometries(grid: &PixelGrid, m: &ModelConfig) -> Result<(Arc<VecchiaGeometry>, Arc<VecchiaGeometry>)> {
    let spatial = VecchiaGeometry::new(&grid.coords(), m.k)?;
    let year_coords: Vec<Coord> = grid.years().iter().map(|&y| [y as f64, 0.0]).collect();
    let k_year = m.k_year.min(grid.n_years().saturating_sub(1)).max(1);
    Ok((spatial, VecchiaGeometry::new(&year_coords, k_year)?))
}

/// Simulates the truth and the data for one seed.
pub fn simulate(cfg: &Config, seed: u64) -> Result<Simulation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (grid, pixels) = simulation_grid(cfg)?;
    let (spatial, temporal) = geometries(&grid, &cfg.model)?;
    let truth = simulate_latents(&spatial, &temporal, &cfg.sim.truth, &mut rng)?;
    let nao: Vec<f64> = (0..grid.n_years()).map(|_| rng.sample(StandardNormal)).collect();
    let (inputs, truncation) = simulate_data(&truth, &grid, pixels, &nao, &cfg.sim, &cfg.model, &mut rng)?;
    let routes = inputs.routes(grid.n_pixels())?;
    let (tables, report) = build_tables(&grid, &routes, &inputs)?;
    Ok(Simulation { grid, routes, inputs, tables, report, truth, truncation })
}
