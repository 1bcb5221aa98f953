use serde::Serialize;

use crate::{Error, Result};

/// Shortest series accepted by [`ess`].
pub const MIN_ESS_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ess {
    pub value: f64,
    /// The series never moved; `value` is then 0.
    pub constant: bool,
}

/// Effective sample size with Geyer's initial positive sequence.
///
/// Autocorrelations are summed in consecutive pairs `ρ_2k + ρ_2k+1` until a
/// pair sum is non-positive. The estimate is capped at the series length.
pub fn ess(trace: &[f64]) -> Result<Ess> {
    let n = trace.len();
    if n < MIN_ESS_LEN {
        return Err(Error::Validation(format!("ESS needs at least {MIN_ESS_LEN} values, got {n}")));
    }
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("ESS of a series with non-finite values".into()));
    }
    if trace.iter().all(|&v| v == trace[0]) {
        return Ok(Ess { value: 0.0, constant: true });
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let c0 = centred.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let rho = |lag: usize| -> f64 {
        let s: f64 = centred[..n - lag].iter().zip(&centred[lag..]).map(|(a, b)| a * b).sum();
        s / n as f64 / c0
    };
    // τ = -1 + 2 Σ_k Γ_k over the initial positive pairs
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    let n_f = n as f64;
    let value = if tau <= 1.0 { n_f } else { (n_f / tau).min(n_f) };
    Ok(Ess { value, constant: false })
}
