//! Physical-measure parameter perturbations for robustness tests.

use crate::dtafns::ModelParams;
use crate::{Error, Result};

/// Scales the physical mean-reversion matrix by `c_kappa` and the physical
/// long-run mean by `c_theta`. Risk-neutral dynamics, volatilities,
/// correlations and the initial state are untouched, so every price and
/// sensitivity is unchanged.
pub fn perturb_params(params: &ModelParams, c_kappa: f64, c_theta: f64) -> Result<ModelParams> {
    for (name, c) in [("c_kappa", c_kappa), ("c_theta", c_theta)] {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::param(name, "scaling constant must be positive"));
        }
    }
    let kappa = params.kappa_p().map(|row| row.map(|k| k * c_kappa));
    let theta = params.theta_p().map(|t| t * c_theta);
    params.with_physical(kappa, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtafns::factor_loadings;

    #[test]
    fn unit_scaling_is_identity() {
        let p = ModelParams::published();
        let q = perturb_params(&p, 1.0, 1.0).unwrap();
        assert_eq!(q.values(), p.values());
    }

    #[test]
    fn scaled_entries() {
        let p = ModelParams::published();
        let k = perturb_params(&p, 1.2, 1.0).unwrap();
        assert!((k.kappa_p()[0][0] - 0.0090).abs() < 1e-12);
        let t = perturb_params(&p, 1.0, 1.2).unwrap();
        assert!((t.theta_p()[1] - 0.03612).abs() < 1e-12);
    }

    #[test]
    fn pricing_side_is_bit_identical() {
        let p = ModelParams::published();
        let q = perturb_params(&p, 1.2, 1.2).unwrap();
        assert_eq!(q.kappa_q(), p.kappa_q());
        assert_eq!(q.theta_q(), p.theta_q());
        assert_eq!(q.sigma(), p.sigma());
        assert_eq!(q.rho(), p.rho());
        assert_eq!(q.x0(), p.x0());
        for tau in [1, 60, 180] {
            assert_eq!(factor_loadings(&q, tau), factor_loadings(&p, tau));
        }
        assert_ne!(q.kappa_p(), p.kappa_p());
    }

    #[test]
    fn rejects_non_positive_constants() {
        let p = ModelParams::published();
        assert!(perturb_params(&p, 0.0, 1.0).is_err());
        assert!(perturb_params(&p, 1.0, f64::NAN).is_err());
    }
}
