use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Below this many draws the empirical joint probabilities are noisy.
pub const RECOMMENDED_DRAWS: usize = 1000;

/// Side of the threshold an excursion lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExcursionSign {
    /// Values strictly above `u`.
    Positive,
    /// Values strictly below `u`.
    Negative,
}

impl ExcursionSign {
    pub fn name(self) -> &'static str {
        match self {
            ExcursionSign::Positive => "positive",
            ExcursionSign::Negative => "negative",
        }
    }

    #[inline]
    pub fn exceeds(self, x: f64, u: f64) -> bool {
        match self {
            ExcursionSign::Positive => x > u,
            ExcursionSign::Negative => x < u,
        }
    }
}

impl fmt::Display for ExcursionSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExcursionSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" | "+" => Ok(ExcursionSign::Positive),
            "negative" | "-" => Ok(ExcursionSign::Negative),
            _ => Err(Error::Validation(format!("unknown excursion sign {s:?}; use positive or negative"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Excursion {
    /// Excursion function per pixel, in pixel order.
    pub f: Vec<f64>,
    /// Pixels by decreasing marginal exceedance, ties by index.
    pub order: Vec<usize>,
    /// Empirical marginal exceedance per pixel.
    pub marginal: Vec<f64>,
}

/// Empirical excursion function over a sample set.
///
/// `samples[k][i]` is pixel `i` under draw `k`. The pixel at position `j` of
/// the marginal ordering gets the fraction of draws in which every pixel at
/// positions `0..=j` exceeds `u`, so `F` is non-increasing along `order` and
/// never above the marginal.
pub fn excursion_function(samples: &[Vec<f64>], u: f64, sign: ExcursionSign) -> Result<Excursion> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Validation("excursion function needs at least one draw".into()));
    }
    let d = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::Dimension { expected: d, got: bad.len() });
    }
    if n < RECOMMENDED_DRAWS {
        log::warn!("excursion function from {n} draws; at least {RECOMMENDED_DRAWS} recommended");
    }
    let mut counts = vec![0usize; d];
    for s in samples {
        for (c, &x) in counts.iter_mut().zip(s) {
            *c += sign.exceeds(x, u) as usize;
        }
    }
    let marginal: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));

    let mut alive = vec![true; n];
    let mut n_alive = n;
    let mut f = vec![0.0; d];
    for &i in &order {
        if n_alive > 0 {
            for (k, s) in samples.iter().enumerate() {
                if alive[k] && !sign.exceeds(s[i], u) {
                    alive[k] = false;
                    n_alive -= 1;
                }
            }
        }
        f[i] = n_alive as f64 / n as f64;
    }
    Ok(Excursion { f, order, marginal })
}

/// One excursion function with the field and threshold it was computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionSet {
    pub field: String,
    pub u: f64,
    pub sign: ExcursionSign,
    pub excursion: Excursion,
}

/// Writes `pixel_id,u,sign,F,marginal,field`, one row per pixel and set.
pub fn write_excursions_csv(path: &std::path::Path, sets: &[ExcursionSet]) -> Result<()> {
    let err = |e: csv::Error| Error::Validation(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["pixel_id", "u", "sign", "F", "marginal", "field"]).map_err(err)?;
    for s in sets {
        let ex = &s.excursion;
        for (i, (&f, &m)) in ex.f.iter().zip(&ex.marginal).enumerate() {
            w.write_record([
                i.to_string(),
                s.u.to_string(),
                s.sign.to_string(),
                format!("{f:.6}"),
                format!("{m:.6}"),
                s.field.clone(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::Io { file: path.to_path_buf(), source: e })
}
