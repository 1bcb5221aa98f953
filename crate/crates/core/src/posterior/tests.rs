use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::tests::{cfg, random_state, synthetic};
use crate::model::{Field, LatentState, Model};

const YEARS: [i32; 3] = [2000, 2001, 2002];

fn draws_from(m: &Model, n: usize, seed: u64) -> PosteriorDraws {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = PosteriorDraws::new(m.n_pixels(), m.n_years());
    for _ in 0..n {
        d.draws.push(random_state(m, &mut rng, 0.3));
    }
    d
}

fn with_presence(m: &Model, p_spc: f64) -> PosteriorDraws {
    let mut d = draws_from(m, 5, 9);
    for s in &mut d.draws {
        s.fields[Field::Niche.index()].fill(0.0);
        s.scalars.beta_act = 0.0;
        // 1 − exp(−exp(x)) = p
        s.scalars.beta0_spc = (-(1.0 - p_spc).ln()).ln();
    }
    d
}

#[test]
fn median_day_of_a_known_z_median() {
    // Gumbel median μ − σ·ln ln 2 placed at z = 1.2976; 366·e^−1.2976 = 99.98632 (rounds to 100.0)
    let sigma = 0.1;
    let mu = 1.2976 + sigma * std::f64::consts::LN_2.ln();
    let day = median_day(mu, sigma, 0.0).unwrap();
    assert!((day - 99.98632).abs() < 1e-4, "{day}");
    assert_eq!((day * 10.0).round() / 10.0, 100.0);
}

#[test]
fn median_day_is_capped() {
    // a median below zero in z would map beyond the year end
    assert_eq!(median_day(-0.5, 0.1, 0.0).unwrap(), 366.0);
}

#[test]
fn infinite_effort_location_is_the_bound() {
    let (m, _) = synthetic(3, 3, 3, 5, &cfg());
    let d = draws_from(&m, 4, 1);
    for s in &d.draws {
        for p in 0..9 {
            for t in 0..3 {
                let x_year = s.field(Field::Year)[t];
                let (mu, _, _) = m.gev_params_for_year(s, p, x_year, m.tables().nao[t], None);
                assert_eq!(mu, m.x_bound(s, p, t).exp());
            }
        }
    }
}

#[test]
fn debiased_days_are_never_later() {
    let (m, _) = synthetic(3, 3, 3, 6, &cfg());
    let d = draws_from(&m, 20, 2);
    let obs = arrival_day_draws(&m, &YEARS, &d, 2001, None, EffortMode::Observed).unwrap();
    let inf = arrival_day_draws(&m, &YEARS, &d, 2001, None, EffortMode::Infinite).unwrap();
    for (o, i) in obs.iter().zip(&inf) {
        for (a, b) in o.iter().zip(i) {
            assert!(b <= a, "debiased {b} after observed {a}");
        }
    }
}

#[test]
fn summaries_ignore_draw_order() {
    let (m, _) = synthetic(3, 3, 3, 7, &cfg());
    let d = draws_from(&m, 31, 3);
    let a = predict_arrival(&m, &YEARS, &d, 2002, None, EffortMode::Observed, 0.01).unwrap();
    let mut shuffled = d.clone();
    shuffled.draws.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let b = predict_arrival(&m, &YEARS, &shuffled, 2002, None, EffortMode::Observed, 0.01).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.q10, x.q50, x.q90, x.masked), (y.q10, y.q50, y.q90, y.masked));
        assert!((x.mean - y.mean).abs() < 1e-12);
        assert!(x.q10 <= x.q50 && x.q50 <= x.q90 && x.q90 <= 366.0 && x.q10 > 0.0);
    }
}

#[test]
fn masks_follow_presence_probability() {
    let (m, _) = synthetic(3, 3, 3, 8, &cfg());
    let half = with_presence(&m, 0.5);
    for &p in &presence_means(&m, &half).unwrap() {
        assert!((p - 0.5).abs() < 1e-12);
    }
    assert!(niche_mask(&m, &half, DEFAULT_MASK_THRESHOLD).unwrap().iter().all(|&x| !x));
    let rare = with_presence(&m, 0.005);
    assert!(niche_mask(&m, &rare, DEFAULT_MASK_THRESHOLD).unwrap().iter().all(|&x| x));
    assert!(niche_mask(&m, &rare, 0.0).unwrap().iter().all(|&x| !x));
    assert!(niche_mask(&m, &rare, 1.0).is_err());
    // masked cells still carry dates
    let rows = predict_arrival(&m, &YEARS, &rare, 2000, None, EffortMode::Infinite, 0.01).unwrap();
    assert!(rows.iter().all(|r| r.masked && r.q50 > 0.0 && r.q50 <= 366.0));
}

#[test]
fn kriging_reproduces_fitted_years_and_decays_beyond() {
    let (m, _) = synthetic(2, 2, 3, 10, &cfg());
    let s: LatentState = draws_from(&m, 1, 5).draws.remove(0);
    let x = s.field(Field::Year);
    for (t, &y) in YEARS.iter().enumerate() {
        assert!((krige_year(&YEARS, &s, y).unwrap() - x[t]).abs() < 1e-10);
    }
    // exponential covariance is Markov in one dimension: only the nearest
    // fitted year matters
    let kappa = s.hyper[Field::Year.index()].kappa;
    let want = x[2] * (-2.0 / kappa).exp();
    assert!((krige_year(&YEARS, &s, 2004).unwrap() - want).abs() < 1e-10);
    let want = x[0] * (-3.0 / kappa).exp();
    assert!((krige_year(&YEARS, &s, 1997).unwrap() - want).abs() < 1e-10);
}

#[test]
fn unfitted_year_needs_nao() {
    let (m, _) = synthetic(2, 2, 3, 11, &cfg());
    let d = draws_from(&m, 3, 6);
    let err = predict_arrival(&m, &YEARS, &d, 2010, None, EffortMode::Infinite, 0.01).unwrap_err();
    assert!(err.to_string().contains("NAO"), "{err}");
    let rows = predict_arrival(&m, &YEARS, &d, 2010, Some(0.4), EffortMode::Observed, 0.01).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(predict_arrival(&m, &YEARS, &PosteriorDraws::new(4, 3), 2001, None, EffortMode::Observed, 0.01).is_err());
}

#[test]
fn observed_mode_falls_back_to_pixel_mean_duration() {
    let (m, _) = synthetic(2, 2, 3, 12, &cfg());
    let d = draws_from(&m, 2, 7);
    let tables = m.tables();
    let means = tables.pixel_mean_durations();
    let days = arrival_day_draws(&m, &YEARS, &d, 2001, None, EffortMode::Observed).unwrap();
    for p in 0..4 {
        let dur = tables.median_duration[4 + p].or(means[p]).or(tables.overall_mean_duration()).unwrap();
        let s = &d.draws[0];
        let (mu, sg, xi) = m.gev_params_for_year(s, p, s.field(Field::Year)[1], tables.nao[1], Some(m.inv_duration_of(dur)));
        assert_eq!(days[p][0], median_day(mu, sg, xi).unwrap());
    }
}

#[test]
fn arrival_csv_has_the_documented_columns() {
    let (m, _) = synthetic(2, 2, 3, 13, &cfg());
    let d = draws_from(&m, 3, 8);
    let rows = predict_arrival(&m, &YEARS, &d, 2000, None, EffortMode::Infinite, 0.01).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("arrival_pred.csv");
    write_arrival_csv(&p, &rows).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("pixel_id,year,mode,q10,q50,q90,masked"));
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(1).unwrap().starts_with("0,2000,infinite,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn raising_the_threshold_never_unmasks(a in 0.0f64..0.99, b in 0.0f64..0.99, seed in 0u64..50) {
        let (m, _) = synthetic(2, 2, 2, seed, &cfg());
        let d = draws_from(&m, 4, seed);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let ml = niche_mask(&m, &d, lo).unwrap();
        let mh = niche_mask(&m, &d, hi).unwrap();
        for (l, h) in ml.iter().zip(&mh) {
            prop_assert!(!l || *h);
        }
    }
}
