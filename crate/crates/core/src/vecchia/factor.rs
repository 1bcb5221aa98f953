use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{build_conditioning, dist, maximin_ordering, Coord, GpHyper};
use crate::{Error, Result};

const PAR_THRESHOLD: usize = 512;

/// Hyperparameter-free part of a Vecchia approximation: ordering,
/// conditioning sets and the distances each conditional needs.
#[derive(Debug, Clone)]
pub struct VecchiaGeometry {
    k: usize,
    order: Vec<usize>,
    cond: Vec<Vec<usize>>,
    /// Row-major `m × m` distances among the conditioning points of each position.
    nn_dist: Vec<Vec<f64>>,
    /// Distances from each ordered point to its conditioning points.
    target_dist: Vec<Vec<f64>>,
}

impl VecchiaGeometry {
    /// Maximin ordering plus `k`-nearest conditioning sets.
    pub fn new(locs: &[Coord], k: usize) -> Result<Arc<Self>> {
        let order = maximin_ordering(locs)?;
        let cond = build_conditioning(&order, locs, k);
        Self::from_parts(locs, order, cond, k)
    }

    pub fn from_parts(locs: &[Coord], order: Vec<usize>, cond: Vec<Vec<usize>>, k: usize) -> Result<Arc<Self>> {
        let n = locs.len();
        if order.len() != n || cond.len() != n {
            return Err(Error::Dimension { expected: n, got: order.len().min(cond.len()) });
        }
        let mut position = vec![usize::MAX; n];
        for (i, &p) in order.iter().enumerate() {
            if p >= n || position[p] != usize::MAX {
                return Err(Error::Validation("ordering is not a permutation".into()));
            }
            position[p] = i;
        }
        for (i, set) in cond.iter().enumerate() {
            if set.len() > k || set.iter().any(|&q| position[q] >= i) {
                return Err(Error::Validation(format!(
                    "conditioning set at ordered index {i} must contain at most {k} earlier points"
                )));
            }
        }
        let nn_dist = cond
            .iter()
            .map(|set| {
                let mut d = Vec::with_capacity(set.len() * set.len());
                for &a in set {
                    for &b in set {
                        d.push(dist(&locs[a], &locs[b]));
                    }
                }
                d
            })
            .collect();
        let target_dist = order
            .iter()
            .zip(&cond)
            .map(|(&p, set)| set.iter().map(|&q| dist(&locs[p], &locs[q])).collect())
            .collect();
        Ok(Arc::new(VecchiaGeometry { k, order, cond, nn_dist, target_dist }))
    }

    pub fn dim(&self) -> usize {
        self.order.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn conditioning_sets(&self) -> &[Vec<usize>] {
        &self.cond
    }

    /// Regression coefficients and conditional variances for `h`.
    pub fn factor(self: &Arc<Self>, h: GpHyper) -> Result<VecchiaFactor> {
        let solve = |i: usize| conditional(&self.nn_dist[i], &self.target_dist[i], &h, i);
        let parts: Vec<(Vec<f64>, f64)> = if self.dim() >= PAR_THRESHOLD {
            (0..self.dim()).into_par_iter().map(solve).collect::<Result<_>>()?
        } else {
            (0..self.dim()).map(solve).collect::<Result<_>>()?
        };
        let (coeffs, cond_var) = parts.into_iter().unzip();
        Ok(VecchiaFactor { geometry: Arc::clone(self), hyper: h, coeffs, cond_var })
    }
}

/// `b = R_SS⁻¹ r_S`, `v = σ²(1 - r_Sᵀ b)` in correlation units.
fn conditional(nn: &[f64], target: &[f64], h: &GpHyper, index: usize) -> Result<(Vec<f64>, f64)> {
    let m = target.len();
    let var = h.sigma * h.sigma;
    if m == 0 {
        return Ok((Vec::new(), var));
    }
    let mut a: Vec<f64> = nn.iter().map(|d| (-d / h.kappa).exp()).collect();
    let r: Vec<f64> = target.iter().map(|d| (-d / h.kappa).exp()).collect();
    let mut b = r.clone();
    if !cholesky_solve(&mut a, m, &mut b) {
        return Err(Error::Factorisation {
            index,
            reason: "conditioning covariance is not positive definite".into(),
        });
    }
    let explained: f64 = r.iter().zip(&b).map(|(x, y)| x * y).sum();
    let v = var * (1.0 - explained);
    if !(v > var * 1e-12) {
        return Err(Error::Factorisation {
            index,
            reason: format!("non-positive conditional variance {v:e}"),
        });
    }
    Ok((b, v))
}

/// In-place Cholesky of the row-major `m × m` matrix `a`, then solves `a x = b`.
fn cholesky_solve(a: &mut [f64], m: usize, b: &mut [f64]) -> bool {
    for j in 0..m {
        let mut d = a[j * m + j];
        for p in 0..j {
            d -= a[j * m + p] * a[j * m + p];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for p in 0..j {
                s -= a[i * m + p] * a[j * m + p];
            }
            a[i * m + j] = s / d;
        }
    }
    for i in 0..m {
        let mut s = b[i];
        for p in 0..i {
            s -= a[i * m + p] * b[p];
        }
        b[i] = s / a[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = b[i];
        for p in i + 1..m {
            s -= a[p * m + i] * b[p];
        }
        b[i] = s / a[i * m + i];
    }
    true
}

/// Sparse factor of the Vecchia-approximated precision `Bᵀ V⁻¹ B`, where `B`
/// is unit lower-triangular in the maximin ordering.
#[derive(Debug, Clone)]
pub struct VecchiaFactor {
    geometry: Arc<VecchiaGeometry>,
    hyper: GpHyper,
    coeffs: Vec<Vec<f64>>,
    cond_var: Vec<f64>,
}

impl VecchiaFactor {
    pub fn dim(&self) -> usize {
        self.cond_var.len()
    }

    pub fn hyper(&self) -> GpHyper {
        self.hyper
    }

    pub fn geometry(&self) -> &Arc<VecchiaGeometry> {
        &self.geometry
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn conditional_variances(&self) -> &[f64] {
        &self.cond_var
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: len });
        }
        Ok(())
    }

    /// `(B x)` in ordered positions: residual of each point from its conditional mean.
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let g = &self.geometry;
        g.order
            .iter()
            .zip(&g.cond)
            .zip(&self.coeffs)
            .map(|((&p, set), b)| x[p] - set.iter().zip(b).map(|(&q, c)| c * x[q]).sum::<f64>())
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check(x.len())?;
        let r = self.residuals(x);
        Ok(r.iter()
            .zip(&self.cond_var)
            .map(|(r, v)| -0.5 * ((2.0 * PI * v).ln() + r * r / v))
            .sum())
    }

    /// Log-density and its gradient `-Σ̃⁻¹ x`.
    pub fn log_density_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(x.len())?;
        let g = &self.geometry;
        let r = self.residuals(x);
        let mut grad = vec![0.0; x.len()];
        let mut logd = 0.0;
        for (i, (&p, set)) in g.order.iter().zip(&g.cond).enumerate() {
            let v = self.cond_var[i];
            logd -= 0.5 * ((2.0 * PI * v).ln() + r[i] * r[i] / v);
            let s = r[i] / v;
            grad[p] -= s;
            for (&q, c) in set.iter().zip(&self.coeffs[i]) {
                grad[q] += c * s;
            }
        }
        Ok((logd, grad))
    }

    /// `B⁻¹ V^{1/2} ε`, with `eps` indexed by original location.
    ///
    /// With iid standard normal `eps` this is an exact draw from the
    /// Vecchia-implied joint distribution.
    pub fn sample_with_noise(&self, eps: &[f64]) -> Result<Vec<f64>> {
        self.check(eps.len())?;
        let scaled: Vec<f64> = self
            .geometry
            .order
            .iter()
            .enumerate()
            .map(|(i, &p)| self.cond_var[i].sqrt() * eps[p])
            .collect();
        Ok(self.forward(scaled))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise(&eps).expect("noise has the factor dimension")
    }

    /// Solves `B x = y` where `y` is given in ordered positions.
    fn forward(&self, y: Vec<f64>) -> Vec<f64> {
        let g = &self.geometry;
        let mut x = vec![0.0; y.len()];
        for (i, (&p, set)) in g.order.iter().zip(&g.cond).enumerate() {
            x[p] = y[i] + set.iter().zip(&self.coeffs[i]).map(|(&q, c)| c * x[q]).sum::<f64>();
        }
        x
    }

    /// Covariance-vector product `Σ̃ v` through two triangular solves.
    pub fn apply_cov(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v.len())?;
        let g = &self.geometry;
        let n = self.dim();
        // Bᵀ y = v, solved from the last ordered position backwards
        let mut acc = v.to_vec();
        let mut y = vec![0.0; n];
        for i in (0..n).rev() {
            let yi = acc[g.order[i]];
            y[i] = yi;
            for (&q, c) in g.cond[i].iter().zip(&self.coeffs[i]) {
                acc[q] += c * yi;
            }
        }
        for (yi, v) in y.iter_mut().zip(&self.cond_var) {
            *yi *= v;
        }
        Ok(self.forward(y))
    }

    /// Quadratic form `vᵀ Σ̃⁻¹ v`.
    pub fn inv_quad(&self, v: &[f64]) -> Result<f64> {
        self.check(v.len())?;
        Ok(self.residuals(v).iter().zip(&self.cond_var).map(|(r, var)| r * r / var).sum())
    }

    /// `log det Σ̃`.
    pub fn log_det(&self) -> f64 {
        self.cond_var.iter().map(|v| v.ln()).sum()
    }

    /// Expected log-density of a draw from the factor (negative entropy).
    pub fn negative_entropy(&self) -> f64 {
        -0.5 * (self.dim() as f64 * (1.0 + (2.0 * PI).ln()) + self.log_det())
    }

    pub fn sum_to_zero(&self) -> SumToZero {
        let w_ones = self.apply_cov(&vec![1.0; self.dim()]).expect("dimension matches");
        let total_var = w_ones.iter().sum();
        SumToZero { w_ones, total_var }
    }

    /// Log-density of `x` under the field conditioned on `Σ x = 0`
    /// (meaningful for centred `x`).
    pub fn constrained_log_density(&self, x: &[f64], constraint: &SumToZero) -> Result<f64> {
        Ok(self.log_density(x)? + constraint.log_normaliser())
    }
}

/// Quantities for conditioning a Gaussian with covariance `Σ̃` on a zero sum.
#[derive(Debug, Clone)]
pub struct SumToZero {
    /// `Σ̃ 1`.
    pub w_ones: Vec<f64>,
    /// `1ᵀ Σ̃ 1`, the variance of the field total.
    pub total_var: f64,
}

impl SumToZero {
    /// `-log N(0; 0, 1ᵀΣ̃1)`: dividing the unconstrained density by the
    /// density of the total at zero gives the constrained density.
    pub fn log_normaliser(&self) -> f64 {
        0.5 * (2.0 * PI * self.total_var).ln()
    }
}
