//! Residual factor exposure of a hedged book, `ξ_t = A_t φ_{t+1} − ν_t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtafns::ModelParams;
use crate::hedging::{HedgeEnv, HedgeRun, PathSet};
use crate::surrogate::{SurrogateModel, DEFAULT_BUMP};
use crate::{Error, Result, Vec3};

/// Per-path, per-month sensitivities: `a` is `n × T × M` instrument
/// gradients (columns of `A_t`), `nu` is `n × T` swaption gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureInputs {
    pub a: Vec<Vec3>,
    pub nu: Vec<Vec3>,
}

/// Recomputes `A_t` from closed-form swap gradients and `ν_t` from the
/// surrogate along the paths of `set`.
pub fn exposure_inputs(env: &HedgeEnv, set: &PathSet, surrogate: &SurrogateModel) -> Result<ExposureInputs> {
    let horizon = env.horizon();
    let rows: Vec<(Vec<Vec3>, Vec<Vec3>)> = (0..set.n_paths as u64)
        .into_par_iter()
        .map_init(
            || surrogate.tape(),
            |tape, i| {
                let market = env.market(&env.path(set, i)?, true)?;
                let nu = (0..horizon)
                    .map(|t| surrogate.sensitivities_with(tape, &market.x[t as usize], horizon - t, DEFAULT_BUMP))
                    .collect();
                Ok((market.gradients, nu))
            },
        )
        .collect::<Result<_>>()?;
    let mut out = ExposureInputs {
        a: Vec::new(),
        nu: Vec::new(),
    };
    for (a, nu) in rows {
        out.a.extend(a);
        out.nu.extend(nu);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathSubset {
    All,
    /// Paths whose swaption finishes in the money (`payoff > 0`).
    PositivePayoff,
    ZeroPayoff,
}

impl PathSubset {
    pub fn label(&self) -> &'static str {
        match self {
            PathSubset::All => "all",
            PathSubset::PositivePayoff => "positive_payoff",
            PathSubset::ZeroPayoff => "zero_payoff",
        }
    }

    fn contains(&self, payoff: f64) -> bool {
        match self {
            PathSubset::All => true,
            PathSubset::PositivePayoff => payoff > 0.0,
            PathSubset::ZeroPayoff => payoff <= 0.0,
        }
    }
}

/// Monthly mean and sample standard deviation of `ξ_t` over one path subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSeries {
    pub subset: PathSubset,
    pub n_paths: usize,
    pub mean: Vec<Vec3>,
    pub std: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub horizon: u32,
    /// All paths, positive-payoff paths, zero-payoff paths.
    pub subsets: Vec<SubsetSeries>,
    pub level_premium: f64,
}

/// Level risk premium at time zero, `θᴾ₁ − X₀⁽¹⁾`.
pub fn level_premium(params: &ModelParams) -> f64 {
    params.theta_p()[0] - params.x0()[0]
}

/// `ξ_t` for every path and month, summarised by payoff subset.
pub fn residual_exposures(run: &HedgeRun, inputs: &ExposureInputs, params: &ModelParams) -> Result<ResidualSeries> {
    let n = run.n_paths();
    let t_len = run.horizon as usize;
    let m = run.m;
    for (got, expected) in [(inputs.a.len(), n * t_len * m), (inputs.nu.len(), n * t_len)] {
        if got != expected {
            return Err(Error::DimensionMismatch { expected, got });
        }
    }
    let xi: Vec<Vec3> = (0..n * t_len)
        .map(|cell| {
            let phi = &run.phi[cell * m..(cell + 1) * m];
            let a = &inputs.a[cell * m..(cell + 1) * m];
            let nu = inputs.nu[cell];
            std::array::from_fn(|k| a.iter().zip(phi).map(|(col, p)| col[k] * p).sum::<f64>() - nu[k])
        })
        .collect();
    let subsets = [PathSubset::All, PathSubset::PositivePayoff, PathSubset::ZeroPayoff]
        .into_iter()
        .map(|subset| {
            let members: Vec<usize> = (0..n).filter(|&i| subset.contains(run.payoff[i])).collect();
            let count = members.len() as f64;
            let mut mean = vec![[0.0; 3]; t_len];
            let mut std = vec![[0.0; 3]; t_len];
            if !members.is_empty() {
                for t in 0..t_len {
                    for k in 0..3 {
                        let mu = members.iter().map(|&i| xi[i * t_len + t][k]).sum::<f64>() / count;
                        mean[t][k] = mu;
                        if members.len() > 1 {
                            let ss: f64 = members.iter().map(|&i| (xi[i * t_len + t][k] - mu).powi(2)).sum();
                            std[t][k] = (ss / (count - 1.0)).sqrt();
                        }
                    }
                }
            }
            SubsetSeries {
                subset,
                n_paths: members.len(),
                mean,
                std,
            }
        })
        .collect();
    Ok(ResidualSeries {
        horizon: run.horizon,
        subsets,
        level_premium: level_premium(params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_with(phi: Vec<f64>, payoff: Vec<f64>, m: usize, horizon: u32) -> HedgeRun {
        let n = payoff.len();
        let t = horizon as usize;
        HedgeRun {
            horizon,
            m,
            v0: 0.0,
            h: payoff.clone(),
            payoff,
            phi,
            v: vec![0.0; n * (t + 1)],
            psi: vec![0.0; n * t],
            ps: None,
        }
    }

    #[test]
    fn exact_sensitivity_match_leaves_no_residual() {
        // A = I (3 instruments), φ = ν.
        let a = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let nu = vec![[0.3, -0.2, 0.1]];
        let run = run_with(vec![0.3, -0.2, 0.1], vec![1.0], 3, 1);
        let s = residual_exposures(&run, &ExposureInputs { a, nu }, &ModelParams::published()).unwrap();
        assert_eq!(s.subsets[0].mean[0], [0.0; 3]);
    }

    #[test]
    fn zero_policy_residual_is_minus_nu() {
        let nu = vec![[0.1, 0.2, 0.3], [0.5, 0.0, -0.1], [0.3, 0.4, 0.5], [0.5, 0.6, 0.7]];
        let a = vec![[1.0, 1.0, 1.0]; 4];
        let run = run_with(vec![0.0; 4], vec![0.0, 2.0], 1, 2);
        let s = residual_exposures(&run, &ExposureInputs { a, nu }, &ModelParams::published()).unwrap();
        let all = &s.subsets[0];
        assert_eq!(all.n_paths, 2);
        assert!((all.mean[0][0] - -0.2).abs() < 1e-15);
        let pos = &s.subsets[1];
        assert_eq!(pos.n_paths, 1);
        assert_eq!(pos.mean[1], [-0.5, -0.6, -0.7]);
        let zero = &s.subsets[2];
        assert_eq!(zero.mean[1], [-0.5, -0.0, 0.1]);
        assert_eq!(pos.n_paths + zero.n_paths, all.n_paths);
    }

    #[test]
    fn level_premium_matches_published_value() {
        assert!((level_premium(&ModelParams::published()) - 0.0312).abs() < 1e-12);
    }
}
