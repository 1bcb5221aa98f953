use crate::grid::LandCover;
use crate::stats::spearman;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub field: String,
    pub class: &'static str,
    /// `None` when either variable is constant.
    pub rho: Option<f64>,
}

/// Spearman correlation of a per-pixel field with each land-cover class.
pub fn landcover_correlation(field_name: &str, field: &[f64], landcover: &[LandCover]) -> Result<Vec<Correlation>> {
    if field.len() != landcover.len() {
        return Err(Error::Dimension { expected: field.len(), got: landcover.len() });
    }
    Ok(LandCover::CLASSES
        .iter()
        .enumerate()
        .map(|(j, &class)| {
            let col: Vec<f64> = landcover.iter().map(|l| l.values()[j]).collect();
            let rho = spearman(field, &col);
            if rho.is_none() {
                log::warn!("correlation of {field_name} with {class} is undefined (constant variable)");
            }
            Correlation { field: field_name.to_string(), class, rho }
        })
        .collect())
}

pub fn write_correlations_csv(path: &std::path::Path, rows: &[Correlation]) -> Result<()> {
    let err = |e: csv::Error| Error::Validation(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["field", "class", "rho", "note"]).map_err(err)?;
    for r in rows {
        let (rho, note) = match r.rho {
            Some(v) => (format!("{v:.6}"), ""),
            None => (String::new(), "undefined: constant variable"),
        };
        w.write_record([r.field.as_str(), r.class, &rho, note]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Io { file: path.to_path_buf(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(n: usize, seed: u64) -> Vec<LandCover> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| LandCover {
                developed: rng.random(),
                forest: rng.random(),
                vegetation: rng.random(),
                water: rng.random(),
            })
            .collect()
    }

    #[test]
    fn identical_and_negated_classes() {
        let lc = table(40, 1);
        let dev: Vec<f64> = lc.iter().map(|l| l.developed).collect();
        let r = landcover_correlation("pref", &dev, &lc).unwrap();
        assert!((r[0].rho.unwrap() - 1.0).abs() < 1e-12);
        let neg_forest: Vec<f64> = lc.iter().map(|l| -l.forest).collect();
        let r = landcover_correlation("pref", &neg_forest, &lc).unwrap();
        assert!((r[1].rho.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_field_is_undefined() {
        let lc = table(10, 2);
        let r = landcover_correlation("niche", &[0.3; 10], &lc).unwrap();
        assert!(r.iter().all(|c| c.rho.is_none()));
        assert!(landcover_correlation("niche", &[0.3; 9], &lc).is_err());
    }

    #[test]
    fn independent_field_is_near_zero() {
        // Under independence ρ√(n−1) is close to standard normal, so with
        // n = 500 the bound 0.15 sits at about 3.35 sd (two-sided p ≈ 8e-4).
        let lc = table(500, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let field: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        for c in landcover_correlation("x", &field, &lc).unwrap() {
            assert!(c.rho.unwrap().abs() < 0.15, "{c:?}");
        }
    }
}
