//! Latent Gaussian field machinery.
//!
//! Fields use the exponential covariance `σ² exp(-d/κ)`. The joint density is
//! approximated by a Vecchia product of conditionals over a maximin ordering,
//! each conditional using at most `k` nearest previously-ordered points. The
//! resulting factor gives `O(Dk)` density, gradient, sampling and
//! covariance-vector products.

mod factor;
mod ordering;
mod pc;

pub use factor::{SumToZero, VecchiaFactor, VecchiaGeometry};
pub use ordering::{build_conditioning, maximin_ordering};
pub use pc::PcPrior;

use serde::{Deserialize, Serialize};

/// Location in projected kilometres (spatial fields) or `[year, 0]` (temporal field).
pub type Coord = [f64; 2];

/// Standard deviation and range of an exponential covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub sigma: f64,
    pub kappa: f64,
}

impl GpHyper {
    pub fn new(sigma: f64, kappa: f64) -> crate::Result<Self> {
        if !(sigma > 0.0 && kappa > 0.0) || !sigma.is_finite() || !kappa.is_finite() {
            return Err(crate::Error::Domain(format!(
                "GP hyperparameters must be positive, got sigma={sigma} kappa={kappa}"
            )));
        }
        Ok(GpHyper { sigma, kappa })
    }
}

#[inline]
pub fn exp_cov(d: f64, h: &GpHyper) -> f64 {
    h.sigma * h.sigma * (-d / h.kappa).exp()
}

#[inline]
pub(crate) fn dist(a: &Coord, b: &Coord) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Subtracts the mean so the field sums to zero.
pub fn center_field(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    center_in_place(&mut out);
    out
}

pub fn center_in_place(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}
