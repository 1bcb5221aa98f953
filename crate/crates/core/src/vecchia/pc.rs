use serde::{Deserialize, Serialize};

use super::GpHyper;
use crate::{Error, Result};

/// Penalised-complexity prior on (range, standard deviation) of a
/// two-dimensional exponential-covariance field, calibrated by
/// `P(κ < κ₀) = α_κ` and `P(σ > σ₀) = α_σ`.
///
/// ```text
/// log π(κ, σ) = log(λ₁ λ₂) - 2 log κ - λ₁/κ - λ₂ σ
/// λ₁ = -log(α_κ) κ₀,   λ₂ = -log(α_σ) / σ₀
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcPrior {
    pub kappa0: f64,
    pub alpha_kappa: f64,
    pub sigma0: f64,
    pub alpha_sigma: f64,
}

impl PcPrior {
    pub fn validate(&self) -> Result<()> {
        let ok = self.kappa0 > 0.0
            && self.sigma0 > 0.0
            && self.alpha_kappa > 0.0
            && self.alpha_kappa < 1.0
            && self.alpha_sigma > 0.0
            && self.alpha_sigma < 1.0;
        if !ok {
            return Err(Error::Domain(format!("invalid PC prior calibration {self:?}")));
        }
        Ok(())
    }

    pub fn lambda_range(&self) -> f64 {
        -self.alpha_kappa.ln() * self.kappa0
    }

    pub fn lambda_sd(&self) -> f64 {
        -self.alpha_sigma.ln() / self.sigma0
    }

    pub fn log_density(&self, h: &GpHyper) -> Result<f64> {
        self.validate()?;
        if !(h.kappa > 0.0 && h.sigma > 0.0) {
            return Err(Error::Domain(format!("PC prior evaluated at non-positive {h:?}")));
        }
        let (l1, l2) = (self.lambda_range(), self.lambda_sd());
        Ok((l1 * l2).ln() - 2.0 * h.kappa.ln() - l1 / h.kappa - l2 * h.sigma)
    }

    /// Marginal prior medians of range and standard deviation.
    pub fn median(&self) -> GpHyper {
        let ln2 = std::f64::consts::LN_2;
        GpHyper {
            kappa: self.lambda_range() / ln2,
            sigma: ln2 / self.lambda_sd(),
        }
    }
}
