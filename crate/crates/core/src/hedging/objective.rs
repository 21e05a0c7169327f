//! Risk measures of the terminal hedging error and their batch gradients.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Mean squared error.
    Mse,
    /// Mean squared shortfall, `mean(max(h, 0)²)`.
    Dr,
    /// Rockafellar-Uryasev CVaR at confidence `a`.
    Cvar,
}

impl ObjectiveKind {
    pub fn label(&self) -> &'static str {
        match self {
            ObjectiveKind::Mse => "MSE",
            ObjectiveKind::Dr => "DR",
            ObjectiveKind::Cvar => "CVaR",
        }
    }
}

/// Index (0-based, into the ascending sort) of the order statistic used as VaR:
/// the smallest `k` with `k / n ≥ a`.
fn var_rank(n: usize, a: f64) -> usize {
    let k = (a * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n) - 1
}

fn check_cvar(n: usize, a: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::param("a", "confidence must lie in (0,1)"));
    }
    if (n as f64) * (1.0 - a) < 1.0 - 1e-9 {
        return Err(Error::SampleTooSmall(format!("CVaR at a={a} needs n(1−a) ≥ 1, got n={n}")));
    }
    Ok(())
}

/// Empirical value-at-risk: `inf{z : #{h ≤ z}/n ≥ a}`.
pub fn empirical_var(errors: &[f64], a: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("hedging errors"));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::param("a", "confidence must lie in (0,1)"));
    }
    let mut sorted = errors.to_vec();
    let k = var_rank(sorted.len(), a);
    let (_, v, _) = sorted.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*v)
}

/// Plug-in CVaR: `v̂ + Σ (h − v̂)⁺ / (n (1 − a))`.
pub fn empirical_cvar(errors: &[f64], a: f64) -> Result<f64> {
    check_cvar(errors.len(), a)?;
    let v = empirical_var(errors, a)?;
    let excess: f64 = errors.iter().map(|h| (h - v).max(0.0)).sum();
    Ok(v + excess / (errors.len() as f64 * (1.0 - a)))
}

/// Objective value of a batch of terminal errors.
pub fn objective(errors: &[f64], kind: ObjectiveKind, a: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("hedging errors"));
    }
    let n = errors.len() as f64;
    let value = match kind {
        ObjectiveKind::Mse => errors.iter().map(|h| h * h).sum::<f64>() / n,
        ObjectiveKind::Dr => errors.iter().map(|h| h.max(0.0).powi(2)).sum::<f64>() / n,
        ObjectiveKind::Cvar => empirical_cvar(errors, a)?,
    };
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{} objective", kind.label())));
    }
    Ok(value)
}

/// Objective value and its derivative with respect to every error.
///
/// For CVaR the VaR order statistic is held fixed (the usual subgradient).
pub fn objective_grad(errors: &[f64], kind: ObjectiveKind, a: f64) -> Result<(f64, Vec<f64>)> {
    let value = objective(errors, kind, a)?;
    let n = errors.len() as f64;
    let grad = match kind {
        ObjectiveKind::Mse => errors.iter().map(|h| 2.0 * h / n).collect(),
        ObjectiveKind::Dr => errors.iter().map(|h| 2.0 * h.max(0.0) / n).collect(),
        ObjectiveKind::Cvar => {
            let v = empirical_var(errors, a)?;
            let w = 1.0 / (n * (1.0 - a));
            errors.iter().map(|&h| if h > v { w } else { 0.0 }).collect()
        }
    };
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_examples() {
        let e = [-1.0, 1.0];
        assert_eq!(objective(&e, ObjectiveKind::Mse, 0.99).unwrap(), 1.0);
        assert_eq!(objective(&e, ObjectiveKind::Dr, 0.99).unwrap(), 0.5);
    }

    #[test]
    fn integer_var_and_cvar() {
        let e: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_var(&e, 0.95).unwrap(), 95.0);
        assert_eq!(empirical_cvar(&e, 0.95).unwrap(), 98.0);
    }

    #[test]
    fn zeros_give_zero() {
        let e = [0.0; 200];
        for kind in [ObjectiveKind::Mse, ObjectiveKind::Dr, ObjectiveKind::Cvar] {
            assert_eq!(objective(&e, kind, 0.99).unwrap(), 0.0);
        }
    }

    #[test]
    fn cvar_rejects_small_batches() {
        assert!(matches!(
            objective(&[1.0; 50], ObjectiveKind::Cvar, 0.99),
            Err(Error::SampleTooSmall(_))
        ));
        assert!(objective(&[1.0; 100], ObjectiveKind::Cvar, 0.99).is_ok());
        assert!(objective(&[], ObjectiveKind::Mse, 0.99).is_err());
    }

    #[test]
    fn gradients_match_differences_away_from_kinks() {
        let e = [0.3, -0.7, 1.1, 0.05, -0.2];
        for kind in [ObjectiveKind::Mse, ObjectiveKind::Dr] {
            let (_, g) = objective_grad(&e, kind, 0.5).unwrap();
            for i in 0..e.len() {
                let h = 1e-6;
                let mut up = e;
                let mut dn = e;
                up[i] += h;
                dn[i] -= h;
                let fd = (objective(&up, kind, 0.5).unwrap() - objective(&dn, kind, 0.5).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-8, "{kind:?} {i}");
            }
        }
    }

    proptest! {
        #[test]
        fn cvar_dominates_var_and_tail_mean(e in prop::collection::vec(-5.0..5.0f64, 100..400), a in 0.5..0.99f64) {
            let var = empirical_var(&e, a).unwrap();
            let cvar = empirical_cvar(&e, a).unwrap();
            prop_assert!(cvar >= var - 1e-12);
            let mut s = e.clone();
            s.sort_by(f64::total_cmp);
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            prop_assert!(cvar >= mean - 1e-12);
        }

        #[test]
        fn cvar_monotone_in_confidence(e in prop::collection::vec(-5.0..5.0f64, 200..400), a in 0.5..0.9f64, da in 0.0..0.09f64) {
            let lo = empirical_cvar(&e, a).unwrap();
            let hi = empirical_cvar(&e, a + da).unwrap();
            prop_assert!(hi >= lo - 1e-9);
        }
    }
}
