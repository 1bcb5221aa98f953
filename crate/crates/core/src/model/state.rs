use serde::{Deserialize, Serialize};

use crate::vecchia::{center_field, GpHyper};
use crate::{Error, Result};

/// The five latent Gaussian fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    Pref,
    Niche,
    GevMu,
    GevSigma,
    Year,
}

impl Field {
    /// Storage order; also the order of fields in `draws.bin`.
    pub const ALL: [Field; 5] = [Field::Pref, Field::Niche, Field::GevMu, Field::GevSigma, Field::Year];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::Pref => "x_pref",
            Field::Niche => "x_niche",
            Field::GevMu => "x_gev_mu",
            Field::GevSigma => "x_gev_sigma",
            Field::Year => "x_year",
        }
    }

    pub fn from_name(name: &str) -> Result<Field> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == name || &f.name()[2..] == name)
            .ok_or_else(|| Error::Validation(format!("unknown field {name:?}")))
    }

    pub fn is_spatial(self) -> bool {
        self != Field::Year
    }
}

/// Scalar coefficients, sharing parameters and the GEV shape.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scalars {
    pub beta0_bbs: f64,
    pub beta0_ckl: f64,
    pub beta0_spc: f64,
    pub beta_act: f64,
    pub beta0_gev_mu: f64,
    pub beta1_gev_mu: f64,
    pub beta0_gev_sigma: f64,
    pub theta_eff: f64,
    pub theta_pref: f64,
    pub theta_act: f64,
    pub theta_niche_gev: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScalarId {
    Beta0Bbs,
    Beta0Ckl,
    Beta0Spc,
    BetaAct,
    Beta0GevMu,
    Beta1GevMu,
    Beta0GevSigma,
    ThetaEff,
    ThetaPref,
    ThetaAct,
    ThetaNicheGev,
    Xi,
}

impl ScalarId {
    pub const ALL: [ScalarId; 12] = [
        ScalarId::Beta0Bbs,
        ScalarId::Beta0Ckl,
        ScalarId::Beta0Spc,
        ScalarId::BetaAct,
        ScalarId::Beta0GevMu,
        ScalarId::Beta1GevMu,
        ScalarId::Beta0GevSigma,
        ScalarId::ThetaEff,
        ScalarId::ThetaPref,
        ScalarId::ThetaAct,
        ScalarId::ThetaNicheGev,
        ScalarId::Xi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScalarId::Beta0Bbs => "beta0_bbs",
            ScalarId::Beta0Ckl => "beta0_ckl",
            ScalarId::Beta0Spc => "beta0_spc",
            ScalarId::BetaAct => "beta_act",
            ScalarId::Beta0GevMu => "beta0_gev_mu",
            ScalarId::Beta1GevMu => "beta1_gev_mu",
            ScalarId::Beta0GevSigma => "beta0_gev_sigma",
            ScalarId::ThetaEff => "theta_eff",
            ScalarId::ThetaPref => "theta_pref",
            ScalarId::ThetaAct => "theta_act",
            ScalarId::ThetaNicheGev => "theta_niche_gev",
            ScalarId::Xi => "xi",
        }
    }

    pub fn block(self) -> ScalarBlock {
        use ScalarId::*;
        match self {
            Beta0Bbs | Beta0Ckl | Beta0Spc | BetaAct => ScalarBlock::Count,
            ThetaEff | ThetaPref | ThetaAct | ThetaNicheGev => ScalarBlock::Sharing,
            Beta0GevMu | Beta1GevMu | Beta0GevSigma | Xi => ScalarBlock::Gev,
        }
    }
}

/// Update blocks for the scalars, grouped by the equation they enter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarBlock {
    Count,
    Sharing,
    Gev,
}

impl ScalarBlock {
    pub const ALL: [ScalarBlock; 3] = [ScalarBlock::Count, ScalarBlock::Sharing, ScalarBlock::Gev];

    pub fn members(self) -> Vec<ScalarId> {
        ScalarId::ALL.into_iter().filter(|s| s.block() == self).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarBlock::Count => "count_scalars",
            ScalarBlock::Sharing => "sharing_scalars",
            ScalarBlock::Gev => "gev_scalars",
        }
    }
}

impl Scalars {
    pub fn get(&self, id: ScalarId) -> f64 {
        *self.slot(id)
    }

    pub fn set(&mut self, id: ScalarId, v: f64) {
        *self.slot_mut(id) = v;
    }

    pub fn to_array(&self) -> [f64; 12] {
        ScalarId::ALL.map(|id| self.get(id))
    }

    pub fn from_array(v: [f64; 12]) -> Self {
        let mut s = Scalars::default();
        for (id, x) in ScalarId::ALL.into_iter().zip(v) {
            s.set(id, x);
        }
        s
    }

    fn slot(&self, id: ScalarId) -> &f64 {
        match id {
            ScalarId::Beta0Bbs => &self.beta0_bbs,
            ScalarId::Beta0Ckl => &self.beta0_ckl,
            ScalarId::Beta0Spc => &self.beta0_spc,
            ScalarId::BetaAct => &self.beta_act,
            ScalarId::Beta0GevMu => &self.beta0_gev_mu,
            ScalarId::Beta1GevMu => &self.beta1_gev_mu,
            ScalarId::Beta0GevSigma => &self.beta0_gev_sigma,
            ScalarId::ThetaEff => &self.theta_eff,
            ScalarId::ThetaPref => &self.theta_pref,
            ScalarId::ThetaAct => &self.theta_act,
            ScalarId::ThetaNicheGev => &self.theta_niche_gev,
            ScalarId::Xi => &self.xi,
        }
    }

    fn slot_mut(&mut self, id: ScalarId) -> &mut f64 {
        match id {
            ScalarId::Beta0Bbs => &mut self.beta0_bbs,
            ScalarId::Beta0Ckl => &mut self.beta0_ckl,
            ScalarId::Beta0Spc => &mut self.beta0_spc,
            ScalarId::BetaAct => &mut self.beta_act,
            ScalarId::Beta0GevMu => &mut self.beta0_gev_mu,
            ScalarId::Beta1GevMu => &mut self.beta1_gev_mu,
            ScalarId::Beta0GevSigma => &mut self.beta0_gev_sigma,
            ScalarId::ThetaEff => &mut self.theta_eff,
            ScalarId::ThetaPref => &mut self.theta_pref,
            ScalarId::ThetaAct => &mut self.theta_act,
            ScalarId::ThetaNicheGev => &mut self.theta_niche_gev,
            ScalarId::Xi => &mut self.xi,
        }
    }
}

/// Complete latent state. Fields are stored in [`Field::ALL`] order; the
/// four spatial fields have one entry per pixel and `x_year` one per year.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub fields: [Vec<f64>; 5],
    pub scalars: Scalars,
    pub hyper: [GpHyper; 5],
}

/// Tolerance on the field sums of a valid state.
pub const SUM_TO_ZERO_TOL: f64 = 1e-9;

impl LatentState {
    pub fn zeros(n_pixels: usize, n_years: usize, hyper: [GpHyper; 5]) -> Self {
        LatentState {
            fields: Field::ALL.map(|f| vec![0.0; if f.is_spatial() { n_pixels } else { n_years }]),
            scalars: Scalars::default(),
            hyper,
        }
    }

    pub fn field(&self, f: Field) -> &[f64] {
        &self.fields[f.index()]
    }

    pub fn field_mut(&mut self, f: Field) -> &mut Vec<f64> {
        &mut self.fields[f.index()]
    }

    pub fn n_pixels(&self) -> usize {
        self.fields[0].len()
    }

    pub fn n_years(&self) -> usize {
        self.fields[Field::Year.index()].len()
    }

    /// Centres every field so that it sums to zero.
    pub fn center(&mut self) {
        for f in &mut self.fields {
            *f = center_field(f);
        }
    }

    pub fn check(&self, n_pixels: usize, n_years: usize) -> Result<()> {
        for f in Field::ALL {
            let want = if f.is_spatial() { n_pixels } else { n_years };
            let x = self.field(f);
            if x.len() != want {
                return Err(Error::Dimension { expected: want, got: x.len() });
            }
            let s: f64 = x.iter().sum();
            if s.abs() > SUM_TO_ZERO_TOL {
                return Err(Error::Validation(format!("{} sums to {s}, not zero", f.name())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_ids_round_trip() {
        let v: [f64; 12] = std::array::from_fn(|i| i as f64 * 0.5);
        let s = Scalars::from_array(v);
        assert_eq!(s.to_array(), v);
        assert_eq!(s.xi, 5.5);
        assert_eq!(s.beta0_bbs, 0.0);
        let names: std::collections::HashSet<_> = ScalarId::ALL.iter().map(|s| s.name()).collect();
        assert_eq!(names.len(), 12);
    }

    #[test]
    fn blocks_partition_scalars() {
        let total: usize = ScalarBlock::ALL.iter().map(|b| b.members().len()).sum();
        assert_eq!(total, 12);
        assert_eq!(
            ScalarBlock::Sharing.members(),
            vec![ScalarId::ThetaEff, ScalarId::ThetaPref, ScalarId::ThetaAct, ScalarId::ThetaNicheGev]
        );
    }

    #[test]
    fn field_names() {
        for f in Field::ALL {
            assert_eq!(Field::from_name(f.name()).unwrap(), f);
        }
        assert_eq!(Field::from_name("niche").unwrap(), Field::Niche);
        assert!(Field::from_name("x_other").is_err());
    }
}
