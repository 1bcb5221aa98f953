use nalgebra::DMatrix;

use super::mala::DenseCov;
use crate::model::{Field, FieldPrior, LatentState, Model};
use crate::vecchia::VecchiaFactor;
use crate::{Error, Result};

/// Largest field dimension that gets a dense curvature preconditioner.
pub const MAX_DENSE_DIM: usize = 2000;

/// Iteration of the first curvature refresh; later ones follow at doubling
/// intervals while adaptation runs.
const FIRST_REFRESH: usize = 25;

/// Central-difference step for the likelihood curvature.
const FD_STEP: f64 = 1e-4;

/// Whether the curvature preconditioner is re-estimated before iteration `it`.
pub fn is_refresh_point(it: usize, adapt_until: usize) -> bool {
    if it >= adapt_until || it < FIRST_REFRESH {
        return it == 0 && adapt_until > 0;
    }
    let r = it / FIRST_REFRESH;
    it % FIRST_REFRESH == 0 && r.is_power_of_two()
}

/// Dense precision `Bᵀ V⁻¹ B` of a Vecchia factor.
pub fn prior_precision(factor: &VecchiaFactor) -> DMatrix<f64> {
    let g = factor.geometry();
    let d = factor.dim();
    let mut q = DMatrix::zeros(d, d);
    for (i, (&p, set)) in g.order().iter().zip(g.conditioning_sets()).enumerate() {
        let inv_v = 1.0 / factor.conditional_variances()[i];
        // row i of B: +1 at p, −c at each conditioning point
        let row: Vec<(usize, f64)> =
            std::iter::once((p, 1.0)).chain(set.iter().zip(&factor.coefficients()[i]).map(|(&q, &c)| (q, -c))).collect();
        for &(a, ba) in &row {
            for &(b, bb) in &row {
                q[(a, b)] += inv_v * ba * bb;
            }
        }
    }
    q
}

/// Diagonal of the negative likelihood Hessian of field `f` at `state`,
/// clamped at zero.
///
/// Each pixel's likelihood terms depend on its own value of the field only
/// (route counts couple a few neighbours), so the Hessian is taken as
/// diagonal and estimated from gradients along the all-ones direction.
pub fn likelihood_curvature(model: &Model, state: &LatentState, priors: &[FieldPrior], f: Field) -> Result<Vec<f64>> {
    let i = f.index();
    let grad_at = |shift: f64| -> Result<Vec<f64>> {
        let mut s = state.clone();
        s.fields[i].iter_mut().for_each(|v| *v += shift);
        model.block_gradient(&s, priors, f)
    };
    let up = grad_at(FD_STEP)?;
    let down = grad_at(-FD_STEP)?;
    // the prior gradient is −Q x, linear, so its difference is −Q·(2h·1)
    let q_ones = priors[i].factor.log_density_grad(&vec![1.0; up.len()])?.1;
    Ok(up
        .iter()
        .zip(&down)
        .zip(&q_ones)
        .map(|((u, d), q1)| {
            let h = -((u - d) / (2.0 * FD_STEP) - q1);
            if h.is_finite() { h.max(0.0) } else { 0.0 }
        })
        .collect())
}

/// `(Q + diag H)⁻¹` for field `f` at `state`.
pub fn curvature_preconditioner(
    model: &Model,
    state: &LatentState,
    priors: &[FieldPrior],
    f: Field,
) -> Result<DenseCov> {
    let prior = &priors[f.index()].factor;
    if prior.dim() > MAX_DENSE_DIM {
        return Err(Error::Validation(format!(
            "{} has {} entries; dense preconditioning is limited to {MAX_DENSE_DIM}",
            f.name(),
            prior.dim()
        )));
    }
    let mut prec = prior_precision(prior);
    for (k, h) in likelihood_curvature(model, state, priors, f)?.into_iter().enumerate() {
        prec[(k, k)] += h;
    }
    let chol = nalgebra::Cholesky::new(prec)
        .ok_or_else(|| Error::Domain(format!("posterior precision of {} is not positive definite", f.name())))?;
    let w = chol.inverse();
    DenseCov::new((&w + w.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{cfg, random_state, synthetic};
    use crate::model::DataTerms;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn refresh_points_double_and_stop_with_adaptation() {
        let pts: Vec<usize> = (0..1000).filter(|&i| is_refresh_point(i, 500)).collect();
        assert_eq!(pts, vec![0, 25, 50, 100, 200, 400]);
        assert!(!(0..100).any(|i| is_refresh_point(i, 0)));
    }

    #[test]
    fn precision_inverts_the_factor_covariance() {
        let (m, _) = synthetic(4, 3, 2, 1, &cfg());
        let s = m.initial_state();
        let prior = &m.priors(&s).unwrap()[Field::Niche.index()].factor;
        let q = prior_precision(prior);
        for j in 0..prior.dim() {
            let mut e = vec![0.0; prior.dim()];
            e[j] = 1.0;
            let back = q.clone() * nalgebra::DVector::from_vec(prior.apply_cov(&e).unwrap());
            for (k, v) in back.iter().enumerate() {
                assert!((v - e[k]).abs() < 1e-8, "{j},{k}: {v}");
            }
        }
    }

    #[test]
    fn curvature_matches_poisson_information() {
        // checklist counts alone: −∂²/∂x² of n x − e^x summed over years is Σ_t λ_pt
        let (m, _) = synthetic(3, 3, 4, 2, &cfg());
        let m = m.with_terms(DataTerms { bbs: false, checklists: true, presences: false, arrivals: false });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_state(&m, &mut rng, 0.3);
        let priors = m.priors(&s).unwrap();
        let h = likelihood_curvature(&m, &s, &priors, Field::Pref).unwrap();
        for (p, hp) in h.iter().enumerate() {
            let want: f64 = (0..m.n_years())
                .filter(|&t| m.tables().n_ckl[t * m.n_pixels() + p].is_some())
                .map(|t| m.log_lambda_ckl(&s, p, t).exp())
                .sum();
            assert!((hp - want).abs() < 1e-5 * want.max(1.0), "pixel {p}: {hp} vs {want}");
        }
    }

    #[test]
    fn preconditioner_is_at_most_the_prior_covariance() {
        let (m, _) = synthetic(3, 3, 3, 4, &cfg());
        let s = m.initial_state();
        let priors = m.priors(&s).unwrap();
        let w = curvature_preconditioner(&m, &s, &priors, Field::Pref).unwrap();
        let prior = &priors[Field::Pref.index()].factor;
        use super::super::mala::Preconditioner;
        // adding curvature can only shrink variances
        for j in 0..9 {
            let mut e = vec![0.0; 9];
            e[j] = 1.0;
            assert!(w.apply(&e).unwrap()[j] <= prior.apply_cov(&e).unwrap()[j] + 1e-12);
        }
    }
}
