use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::dist::GevParams;
use crate::grid::BbsObservation;
use crate::vecchia::center_field;

pub(crate) fn coords(nx: usize, ny: usize) -> Vec<Coord> {
    (0..nx * ny).map(|i| [(i % nx) as f64 * 20.0, (i / nx) as f64 * 20.0]).collect()
}

pub(crate) fn cfg() -> ModelConfig {
    ModelConfig { k: 5, ..ModelConfig::default() }
}

pub(crate) fn random_state(m: &Model, rng: &mut ChaCha8Rng, sd: f64) -> LatentState {
    let mut s = m.initial_state();
    for f in Field::ALL {
        let x: Vec<f64> = (0..s.field(f).len()).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        *s.field_mut(f) = center_field(&x);
    }
    s.scalars = Scalars {
        beta0_bbs: 1.2,
        beta0_ckl: 2.0,
        beta0_spc: -1.0,
        beta_act: -0.4,
        beta0_gev_mu: 0.6,
        beta1_gev_mu: 0.1,
        beta0_gev_sigma: -1.5,
        theta_eff: -0.3,
        theta_pref: 0.25,
        theta_act: -0.2,
        theta_niche_gev: 0.15,
        xi: -0.2,
    };
    s
}

/// D = nx·ny pixels with random tables whose arrivals are drawn from `truth`.
pub(crate) fn synthetic(nx: usize, ny: usize, t_n: usize, seed: u64, cfg: &ModelConfig) -> (Model, LatentState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = nx * ny;
    let years: Vec<f64> = (0..t_n).map(|t| 2000.0 + t as f64).collect();
    let areas: Vec<f64> = (0..d).map(|i| if i % 4 == 0 { 250.0 } else { 400.0 }).collect();
    let nao = (0..t_n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut tables = ResponseTables::empty(d, t_n, nao);
    for c in 0..d * t_n {
        let n: u64 = rng.random_range(0..12);
        tables.n_ckl[c] = Some(n);
        if n > 0 {
            tables.median_duration[c] = Some(rng.random_range(10.0..150.0));
            let s = rng.random_range(0..=n);
            tables.n_spc[c] = Some(s);
            // placeholder until arrivals are drawn from the truth below
            tables.z[c] = (s > 0).then_some(1.0);
        }
    }
    for r in 0..6 {
        let a = rng.random_range(0..d);
        let b = (a + 1) % d;
        tables.bbs.push(BbsObservation {
            route_id: r,
            year_idx: r as usize % t_n,
            count: rng.random_range(0..30),
            stops: 40,
            weights: vec![(a, 0.7 * 0.8), (b, 0.3 * 0.8)],
        });
    }
    let model = Model::from_parts(&coords(nx, ny), &areas, &years, tables.clone(), cfg).unwrap();
    let truth = random_state(&model, &mut rng, 0.4);
    for t in 0..t_n {
        for p in 0..d {
            let c = t * d + p;
            if tables.n_spc[c].unwrap_or(0) > 0 {
                let inv_d = model.inv_duration()[c].unwrap();
                let (mu, sigma, xi) = model.gev_params(&truth, p, t, inv_d);
                let g = GevParams::new(mu, sigma, xi).unwrap();
                // arrivals strictly inside the support, as in real data
                let z = loop {
                    let z = g.sample(&mut rng);
                    if z > 0.0 {
                        break z;
                    }
                };
                tables.z[c] = Some(z);
            }
        }
    }
    let model = Model::from_parts(&coords(nx, ny), &areas, &years, tables, cfg).unwrap();
    (model, truth)
}

fn fd_check(m: &Model, s: &LatentState, field: Field, tol: f64) {
    let priors = m.priors(s).unwrap();
    let grad = m.block_gradient(s, &priors, field).unwrap();
    let h = 1e-5;
    for i in 0..grad.len() {
        let mut up = s.clone();
        up.field_mut(field)[i] += h;
        let mut dn = s.clone();
        dn.field_mut(field)[i] -= h;
        let fd = (m.log_posterior(&up, &priors).unwrap().total() - m.log_posterior(&dn, &priors).unwrap().total())
            / (2.0 * h);
        let scale = fd.abs().max(grad[i].abs()).max(1e-2);
        assert!(
            (fd - grad[i]).abs() / scale < tol,
            "{} [{i}]: analytic {} vs finite difference {fd}",
            field.name(),
            grad[i]
        );
    }
}

#[test]
fn saturating_function_examples() {
    assert_eq!(saturating_g(0.0, 0.0), 0.5);
    assert!((saturating_g(2f64.ln(), 3f64.ln()) - 1.5).abs() < 1e-15);
    assert!((saturating_g(0.7, 60.0) - 0.7f64.exp()).abs() < 1e-15);
    assert_eq!(saturating_g(0.7, f64::INFINITY), 0.7f64.exp());
    assert!(saturating_g(0.7, -800.0) >= 0.0);
    let mut last = 0.0;
    for i in 0..200 {
        let v = saturating_g(0.3, -10.0 + 0.1 * i as f64);
        assert!(v > last && v < 0.3f64.exp());
        last = v;
    }
}

#[test]
fn g_partials_match_finite_differences() {
    for &(xb, xe) in &[(0.0, 0.0), (0.4, -1.3), (-0.7, 2.2), (1.1, 6.0)] {
        let (_, d_b, d_e) = g_partials(xb, xe);
        let h = 1e-6;
        let fb = (saturating_g(xb + h, xe) - saturating_g(xb - h, xe)) / (2.0 * h);
        let fe = (saturating_g(xb, xe + h) - saturating_g(xb, xe - h)) / (2.0 * h);
        assert!((d_b - fb).abs() < 1e-8 * fb.abs().max(1.0));
        assert!((d_e - fe).abs() < 1e-8 * fe.abs().max(1.0));
    }
}

#[test]
fn effort_examples() {
    let s = Scalars { theta_pref: 0.191, theta_act: -0.15, ..Scalars::default() };
    assert!((effort(&s, std::f64::consts::E, 1.0).unwrap() - 0.041).abs() < 1e-15);
    let s2 = Scalars { theta_eff: 0.3, theta_pref: 0.191, theta_act: 123.0, ..Scalars::default() };
    assert_eq!(effort(&s2, 5.0, f64::INFINITY).unwrap(), 0.3 + 0.191 * 5f64.ln());
    assert_eq!(effort(&Scalars::default(), 7.0, 3.0).unwrap(), 0.0);
    assert!(effort(&s, 1.0, 0.0).is_err());
    assert!(effort(&s, 1.0, -2.0).is_err());
}

#[test]
fn zero_state_predictors() {
    let mut tables = ResponseTables::empty(2, 1, vec![0.0]);
    tables.n_ckl = vec![Some(3), Some(0)];
    tables.median_duration = vec![Some(60.0), None];
    tables.n_spc = vec![Some(0), None];
    let m = Model::from_parts(&coords(2, 1), &[400.0, 200.0], &[2001.0], tables, &cfg()).unwrap();
    let s = m.initial_state();
    let pv = m.predictors(&s).unwrap();
    assert_eq!(pv.log_lambda_bbs, vec![0.0, 0.0]);
    assert_eq!(pv.log_lambda_ckl[0], 0.0);
    assert!((pv.log_lambda_ckl[1].exp() - 0.5).abs() < 1e-15);
    assert!((crate::dist::inv_cloglog(pv.cloglog_spc[0].unwrap()) - 0.632_120_558_828_557_7).abs() < 1e-15);
    assert_eq!(pv.cloglog_spc[1], None);
    assert_eq!(pv.mu, vec![0.5, 0.5]);
    assert_eq!(pv.log_sigma, vec![0.0, 0.0]);
}

#[test]
fn niche_sharing_and_nao_enter_the_bound() {
    let tables = ResponseTables::empty(2, 2, vec![0.0, 1.5]);
    let m = Model::from_parts(&coords(2, 1), &[400.0, 400.0], &[2001.0, 2002.0], tables, &cfg()).unwrap();
    let mut s = m.initial_state();
    s.field_mut(Field::Niche).copy_from_slice(&[2.0, -2.0]);
    s.scalars.theta_niche_gev = 0.049;
    assert!((m.x_bound(&s, 0, 0) - 0.098).abs() < 1e-15);
    s.scalars.beta1_gev_mu = 0.2;
    let (mu0, _, _) = m.gev_params(&s, 0, 0, 0.0);
    let (mu1, _, _) = m.gev_params(&s, 0, 1, 0.0);
    assert!(mu1 > mu0);
}

#[test]
fn single_poisson_cell() {
    let mut tables = ResponseTables::empty(1, 1, vec![0.0]);
    tables.n_ckl[0] = Some(2);
    tables.median_duration[0] = Some(30.0);
    tables.n_spc[0] = Some(0);
    let m = Model::from_parts(&coords(1, 1), &[400.0], &[2001.0], tables, &cfg())
        .unwrap()
        .with_terms(DataTerms { checklists: true, ..DataTerms::NONE });
    let lp = m.log_posterior_at(&m.initial_state()).unwrap();
    assert!((lp.checklists - (-1.0 - 2f64.ln())).abs() < 1e-15);
    assert_eq!(lp.presences, 0.0);
}

#[test]
fn empty_tables_give_prior_only() {
    let tables = ResponseTables::empty(4, 2, vec![0.0, 0.0]);
    let m = Model::from_parts(&coords(2, 2), &[400.0; 4], &[1.0, 2.0], tables, &cfg()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = random_state(&m, &mut rng, 0.5);
    let lp = m.log_posterior_at(&s).unwrap();
    assert_eq!(lp.likelihood(), 0.0);
    assert_eq!(lp.total(), lp.prior());
    let priors = m.priors(&s).unwrap();
    for f in Field::ALL {
        let g = m.block_gradient(&s, &priors, f).unwrap();
        let (_, prior_grad) = priors[f.index()].factor.log_density_grad(s.field(f)).unwrap();
        assert_eq!(g, prior_grad);
    }
}

#[test]
fn terms_are_additive() {
    let (m, s) = synthetic(4, 4, 2, 11, &cfg());
    let full = m.log_posterior_at(&s).unwrap();
    let none = m.clone().with_terms(DataTerms::NONE).log_posterior_at(&s).unwrap();
    assert_eq!(none.likelihood(), 0.0);
    let toggles = [
        (DataTerms { bbs: false, ..DataTerms::ALL }, full.bbs),
        (DataTerms { checklists: false, ..DataTerms::ALL }, full.checklists),
        (DataTerms { presences: false, ..DataTerms::ALL }, full.presences),
        (DataTerms { arrivals: false, ..DataTerms::ALL }, full.arrivals),
    ];
    for (terms, dropped) in toggles {
        assert!(dropped != 0.0);
        let part = m.clone().with_terms(terms).log_posterior_at(&s).unwrap();
        assert!((full.total() - part.total() - dropped).abs() < 1e-9 * full.total().abs());
    }
}

#[test]
fn gev_only_drops_count_terms_and_sharing() {
    let (m, mut s) = synthetic(4, 4, 2, 12, &ModelConfig { gev_only: true, ..cfg() });
    s.scalars.theta_pref = 0.0;
    s.scalars.theta_act = 0.0;
    s.scalars.theta_niche_gev = 0.0;
    let lp = m.log_posterior_at(&s).unwrap();
    assert_eq!((lp.bbs, lp.checklists, lp.presences), (0.0, 0.0, 0.0));
    assert!(lp.arrivals.is_finite() && lp.arrivals != 0.0);
    assert_eq!(m.active_fields(), vec![Field::GevMu, Field::GevSigma]);
    for id in ScalarBlock::Sharing.members().into_iter().chain(ScalarBlock::Count.members()) {
        assert!(m.scalar_frozen(id));
    }
    assert!(ScalarBlock::Gev.members().into_iter().all(|id| !m.scalar_frozen(id)));
    // location is the bound itself
    let (mu, _, _) = m.gev_params(&s, 3, 1, 0.5);
    assert_eq!(mu, m.x_bound(&s, 3, 1).exp());
    // the checklist and niche fields no longer matter
    let mut moved = s.clone();
    moved.field_mut(Field::Pref)[0] += 1.0;
    moved.field_mut(Field::Niche)[0] += 1.0;
    assert_eq!(m.log_posterior_at(&moved).unwrap().total(), lp.total());
}

#[test]
fn block_gradients_match_finite_differences() {
    let (m, s) = synthetic(5, 5, 3, 5, &cfg());
    assert!(m.log_posterior_at(&s).unwrap().total().is_finite());
    for f in Field::ALL {
        fd_check(&m, &s, f, 1e-4);
    }
}

#[test]
fn preference_gradient_includes_the_arrival_pathway() {
    let (m, s) = synthetic(5, 5, 3, 6, &cfg());
    let arrivals_only = m.clone().with_terms(DataTerms { arrivals: true, ..DataTerms::NONE });
    let priors = m.priors(&s).unwrap();
    let with = arrivals_only.block_gradient(&s, &priors, Field::Pref).unwrap();
    let prior_only = m.clone().with_terms(DataTerms::NONE).block_gradient(&s, &priors, Field::Pref).unwrap();
    assert!(with.iter().zip(&prior_only).any(|(a, b)| (a - b).abs() > 1e-6));
    fd_check(&arrivals_only, &s, Field::Pref, 1e-4);
    fd_check(&arrivals_only, &s, Field::Year, 1e-4);
}

#[test]
fn no_sharing_decouples_arrivals_from_count_fields() {
    let (m, mut s) = synthetic(4, 4, 2, 7, &cfg());
    s.scalars.theta_pref = 0.0;
    s.scalars.theta_act = 0.0;
    s.scalars.theta_niche_gev = 0.0;
    let arrivals = m.clone().with_terms(DataTerms { arrivals: true, ..DataTerms::NONE });
    let none = m.clone().with_terms(DataTerms::NONE);
    let priors = m.priors(&s).unwrap();
    for f in [Field::Pref, Field::Niche, Field::Year] {
        assert_eq!(arrivals.block_gradient(&s, &priors, f).unwrap(), none.block_gradient(&s, &priors, f).unwrap());
    }
}

#[test]
fn support_violation_gives_negative_infinity() {
    let (m, mut s) = synthetic(3, 3, 2, 8, &cfg());
    s.scalars.xi = -0.9;
    s.scalars.beta0_gev_mu = -3.0;
    assert_eq!(m.log_posterior_at(&s).unwrap().total(), f64::NEG_INFINITY);
    assert_eq!(m.nonfinite_count(), 0);
}

#[test]
fn xi_truncation() {
    let (m, mut s) = synthetic(3, 3, 2, 9, &cfg());
    s.scalars.xi = -1.2;
    assert_eq!(m.log_posterior_at(&s).unwrap().total(), f64::NEG_INFINITY);
    s.scalars.xi = 0.6;
    assert_eq!(m.log_posterior_at(&s).unwrap().total(), f64::NEG_INFINITY);
}

#[test]
fn overflow_is_counted() {
    let (m, mut s) = synthetic(3, 3, 2, 10, &cfg());
    s.scalars.beta0_ckl = 800.0;
    assert_eq!(m.log_posterior_at(&s).unwrap().total(), f64::NEG_INFINITY);
    assert!(m.nonfinite_count() >= 1);
}

#[test]
fn mu_stays_below_the_bound() {
    let (m, s) = synthetic(4, 4, 3, 13, &cfg());
    let pv = m.predictors(&s).unwrap();
    for (mu, xb) in pv.mu.iter().zip(&pv.x_bound) {
        assert!(*mu > 0.0 && *mu < xb.exp());
    }
}

#[test]
fn year_agnostic_parameters_match_cell_parameters() {
    let (m, truth) = synthetic(3, 3, 2, 17, &cfg());
    for c in 0..m.tables().n_cells() {
        let (p, t) = (c % 9, c / 9);
        let x_year = truth.field(Field::Year)[t];
        let nao = m.tables().nao[t];
        if let Some(inv_d) = m.inv_duration()[c] {
            let a = m.gev_params(&truth, p, t, inv_d);
            let b = m.gev_params_for_year(&truth, p, x_year, nao, Some(inv_d));
            assert!((a.0 - b.0).abs() <= 1e-15 * a.0 && a.1 == b.1 && a.2 == b.2);
        }
        let (mu_inf, _, _) = m.gev_params_for_year(&truth, p, x_year, nao, None);
        assert_eq!(mu_inf, m.x_bound(&truth, p, t).exp());
    }
    assert_eq!(m.inv_duration_of(30.0), 2.0);
}
