use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::vecchia::VecchiaFactor;
use crate::{Error, Result};

/// Symmetric positive-definite pre-whitening operator `W` of a MALA block.
pub trait Preconditioner {
    fn dim(&self) -> usize;
    /// `W v`.
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
    /// `vᵀ W⁻¹ v`.
    fn inv_quad(&self, v: &[f64]) -> Result<f64>;
    fn log_det(&self) -> f64;
    /// `L ε` for some `L` with `L Lᵀ = W`.
    fn correlate(&self, eps: &[f64]) -> Result<Vec<f64>>;
}

impl Preconditioner for VecchiaFactor {
    fn dim(&self) -> usize {
        VecchiaFactor::dim(self)
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.apply_cov(v)
    }

    fn inv_quad(&self, v: &[f64]) -> Result<f64> {
        VecchiaFactor::inv_quad(self, v)
    }

    fn log_det(&self) -> f64 {
        VecchiaFactor::log_det(self)
    }

    fn correlate(&self, eps: &[f64]) -> Result<Vec<f64>> {
        self.sample_with_noise(eps)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl Preconditioner for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(v.to_vec())
    }

    fn inv_quad(&self, v: &[f64]) -> Result<f64> {
        Ok(v.iter().map(|x| x * x).sum())
    }

    fn log_det(&self) -> f64 {
        0.0
    }

    fn correlate(&self, eps: &[f64]) -> Result<Vec<f64>> {
        Ok(eps.to_vec())
    }
}

/// Dense covariance held through its Cholesky factor.
#[derive(Debug, Clone)]
pub struct DenseCov {
    cov: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl DenseCov {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::Dimension { expected: cov.nrows(), got: cov.ncols() });
        }
        let chol = nalgebra::Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Domain("covariance is not positive definite".into()))?;
        Ok(DenseCov { cov, chol })
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

impl Preconditioner for DenseCov {
    fn dim(&self) -> usize {
        self.cov.nrows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok((&self.cov * DVector::from_column_slice(v)).as_slice().to_vec())
    }

    fn inv_quad(&self, v: &[f64]) -> Result<f64> {
        let v = DVector::from_column_slice(v);
        Ok(v.dot(&self.chol.solve(&v)))
    }

    fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    fn correlate(&self, eps: &[f64]) -> Result<Vec<f64>> {
        Ok((self.chol.l() * DVector::from_column_slice(eps)).as_slice().to_vec())
    }
}

/// Conditions MALA proposals on a zero sum.
///
/// A draw `x̃ ~ N(m, δ²W)` is mapped to `x̃ - W1 (1ᵀx̃)/(1ᵀW1)`, an exact
/// draw from `N(m, δ²W)` conditioned on `1ᵀx = 0`. Its density on the
/// constraint plane is `N(x; m, δ²W) / N(0; 1ᵀm, δ² 1ᵀW1)`.
#[derive(Debug, Clone)]
pub struct ZeroSum {
    pub(crate) w_ones: Vec<f64>,
    pub(crate) total: f64,
}

impl ZeroSum {
    pub fn new(w: &dyn Preconditioner) -> Result<Self> {
        let w_ones = w.apply(&vec![1.0; w.dim()])?;
        let total = w_ones.iter().sum();
        Ok(ZeroSum { w_ones, total })
    }

    pub fn from_parts(w_ones: Vec<f64>, total: f64) -> Self {
        ZeroSum { w_ones, total }
    }
}

/// Log-density and gradient of a block target at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Eval {
    pub log_pi: f64,
    pub grad: Vec<f64>,
}

impl Eval {
    fn usable(&self) -> bool {
        self.log_pi.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

/// Langevin mean `x + (δ²/2) W ∇`.
fn drift(x: &[f64], grad: &[f64], delta: f64, w: &dyn Preconditioner) -> Result<Vec<f64>> {
    let wg = w.apply(grad)?;
    let h = 0.5 * delta * delta;
    Ok(x.iter().zip(&wg).map(|(xi, gi)| xi + h * gi).collect())
}

/// `log q(y | x)` for the MALA proposal from `x` with gradient `grad`.
pub fn mala_log_q(
    y: &[f64],
    x: &[f64],
    grad: &[f64],
    delta: f64,
    w: &dyn Preconditioner,
    zero_sum: Option<&ZeroSum>,
) -> Result<f64> {
    let n = x.len();
    if y.len() != n || grad.len() != n || w.dim() != n {
        return Err(Error::Dimension { expected: n, got: y.len().min(grad.len()).min(w.dim()) });
    }
    let m = drift(x, grad, delta, w)?;
    let r: Vec<f64> = y.iter().zip(&m).map(|(a, b)| a - b).collect();
    let d2 = delta * delta;
    let mut lq = -0.5 * (w.inv_quad(&r)? / d2 + n as f64 * (2.0 * PI * d2).ln() + w.log_det());
    if let Some(zs) = zero_sum {
        let s: f64 = m.iter().sum();
        let v = d2 * zs.total;
        lq += 0.5 * ((2.0 * PI * v).ln() + s * s / v);
    }
    Ok(lq)
}

/// A MALA proposal and its forward log-density `log q(x★ | x)`.
///
/// The reverse density needs the gradient at `x★`; evaluate it with
/// [`mala_log_q`] once the target has been evaluated there.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub x: Vec<f64>,
    pub log_q_forward: f64,
}

/// Proposes `x★ = x + (δ²/2) W ∇ + δ L ε`, conditioned on a zero sum when
/// requested. `eps` is the standard normal noise.
pub fn mala_propose(
    x: &[f64],
    grad: &[f64],
    delta: f64,
    w: &dyn Preconditioner,
    zero_sum: Option<&ZeroSum>,
    eps: &[f64],
) -> Result<Proposal> {
    let m = drift(x, grad, delta, w)?;
    let noise = w.correlate(eps)?;
    let mut y: Vec<f64> = m.iter().zip(&noise).map(|(a, b)| a + delta * b).collect();
    if let Some(zs) = zero_sum {
        let s: f64 = y.iter().sum::<f64>() / zs.total;
        for (yi, wi) in y.iter_mut().zip(&zs.w_ones) {
            *yi -= wi * s;
        }
        // remove rounding drift so the stored field sums to zero
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        y.iter_mut().for_each(|v| *v -= mean);
    }
    let log_q_forward = mala_log_q(&y, x, grad, delta, w, zero_sum)?;
    Ok(Proposal { x: y, log_q_forward })
}

/// Outcome of one Metropolis-adjusted Langevin update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub accepted: bool,
    /// `min(0, log acceptance ratio)`, or `-∞` when the proposal was unusable.
    pub log_alpha: f64,
    /// The current point or the proposal had a non-finite gradient.
    pub nonfinite: bool,
}

impl StepResult {
    pub fn acceptance_probability(&self) -> f64 {
        self.log_alpha.exp()
    }
}

/// One MALA update of `x`. `current` must hold the target at `x` and is
/// replaced by the target at the new point on acceptance.
pub fn mala_step<F, R>(
    x: &mut Vec<f64>,
    current: &mut Eval,
    mut target: F,
    delta: f64,
    w: &dyn Preconditioner,
    zero_sum: Option<&ZeroSum>,
    rng: &mut R,
) -> Result<StepResult>
where
    F: FnMut(&[f64]) -> Result<Eval>,
    R: Rng + ?Sized,
{
    let reject = |nonfinite| StepResult { accepted: false, log_alpha: f64::NEG_INFINITY, nonfinite };
    let eps: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    let u: f64 = rng.random();
    if !current.usable() {
        return Ok(reject(true));
    }
    let prop = mala_propose(x, &current.grad, delta, w, zero_sum, &eps)?;
    let cand = target(&prop.x)?;
    if !cand.usable() {
        return Ok(reject(cand.log_pi.is_finite() || cand.log_pi.is_nan()));
    }
    let log_q_reverse = mala_log_q(x, &prop.x, &cand.grad, delta, w, zero_sum)?;
    let log_ratio = cand.log_pi - current.log_pi + log_q_reverse - prop.log_q_forward;
    let log_alpha = if log_ratio.is_nan() { f64::NEG_INFINITY } else { log_ratio.min(0.0) };
    let accepted = u.ln() < log_alpha;
    if accepted {
        *x = prop.x;
        *current = cand;
    }
    Ok(StepResult { accepted, log_alpha, nonfinite: false })
}
