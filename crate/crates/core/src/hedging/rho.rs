//! Regularised rho-hedging benchmark.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::env::{run_strategy, HedgeEnv, HedgeRun, Observation, PathSet, PositionProvider, RunOptions};
use crate::nn::Tape;
use crate::surrogate::{SurrogateModel, DEFAULT_BUMP};
use crate::{Error, Result, Vec3};

/// Ridge weights: `l1‖φ‖² + l2‖φ − φ_prev‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regularization {
    pub l1: f64,
    pub l2: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self { l1: 0.01, l2: 0.01 }
    }
}

/// `argmin ‖Qφ − b‖² + l1‖φ‖² + l2‖φ − φ_prev‖²` over the selected factor rows.
///
/// `sens[j]` is instrument j's factor gradient (column j of the 3×M matrix).
/// Without regularisation and with a square system the exact solve is used.
pub fn rho_positions(
    sens: &[Vec3],
    b: &Vec3,
    prev_phi: &[f64],
    factors: &[usize],
    reg: &Regularization,
) -> Result<Vec<f64>> {
    let m = sens.len();
    if m == 0 {
        return Err(Error::Empty("hedging instruments"));
    }
    if prev_phi.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: prev_phi.len(),
        });
    }
    if factors.is_empty() || factors.iter().any(|&k| k > 2) {
        return Err(Error::param("factors", "need one or more factor indices in 0..3"));
    }
    if reg.l1 < 0.0 || reg.l2 < 0.0 {
        return Err(Error::param("reg", "weights must be non-negative"));
    }
    let q = DMatrix::from_fn(factors.len(), m, |r, j| sens[j][factors[r]]);
    let rhs = DVector::from_iterator(factors.len(), factors.iter().map(|&k| b[k]));
    let solution = if reg.l1 == 0.0 && reg.l2 == 0.0 && factors.len() == m {
        q.lu().solve(&rhs)
    } else {
        let normal = q.transpose() * &q + DMatrix::identity(m, m) * (reg.l1 + reg.l2);
        let target = q.transpose() * rhs + DVector::from_column_slice(prev_phi) * reg.l2;
        normal.lu().solve(&target)
    };
    let phi = solution.ok_or_else(|| Error::Singular("rho-hedging system".into()))?;
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("rho-hedging system".into()));
    }
    Ok(phi.iter().copied().collect())
}

/// Per-step rho hedge backed by the surrogate's swaption sensitivities.
#[derive(Debug, Clone)]
pub struct RhoHedger<'a> {
    pub surrogate: &'a SurrogateModel,
    /// Zero-based factor indices to neutralise.
    pub factors: Vec<usize>,
    pub reg: Regularization,
    pub m: usize,
    pub bump: f64,
}

impl<'a> RhoHedger<'a> {
    pub fn new(surrogate: &'a SurrogateModel, factors: Vec<usize>, reg: Regularization, m: usize) -> Result<Self> {
        if factors.len() > m {
            return Err(Error::param("factors", "cannot neutralise more factors than instruments"));
        }
        if factors.is_empty() || factors.iter().any(|&k| k > 2) {
            return Err(Error::param("factors", "need one or more factor indices in 0..3"));
        }
        Ok(Self {
            surrogate,
            factors,
            reg,
            m,
            bump: DEFAULT_BUMP,
        })
    }
}

impl PositionProvider for RhoHedger<'_> {
    type Scratch = Tape;

    fn n_instruments(&self) -> usize {
        self.m
    }

    fn scratch(&self) -> Tape {
        self.surrogate.tape()
    }

    fn needs_gradients(&self) -> bool {
        true
    }

    fn positions(&self, obs: &Observation<'_>, tape: &mut Tape, out: &mut [f64]) {
        let b = self.surrogate.sensitivities_with(tape, &obs.x, obs.ttm_months, self.bump);
        match rho_positions(obs.gradients, &b, obs.prev_phi, &self.factors, &self.reg) {
            Ok(phi) => out.copy_from_slice(&phi),
            // Only reachable without regularisation; hold the previous book.
            Err(_) => out.copy_from_slice(obs.prev_phi),
        }
    }
}

/// Conventional label, e.g. `ρ-X(1)`, `ρ-(X(1),X(2))`, or `ρ` for all three.
pub fn rho_label(factors: &[usize]) -> String {
    match factors.len() {
        1 => format!("rho-X({})", factors[0] + 1),
        3 => "rho".to_string(),
        _ => format!(
            "rho-({})",
            factors.iter().map(|k| format!("X({})", k + 1)).collect::<Vec<_>>().join(",")
        ),
    }
}

/// Every factor subset of size `m` (the ρ variants reported for an `m`-swap book).
pub fn rho_variants(m: usize) -> Vec<Vec<usize>> {
    match m {
        1 => vec![vec![0], vec![1], vec![2]],
        2 => vec![vec![0, 1], vec![0, 2], vec![1, 2]],
        _ => vec![vec![0, 1, 2]],
    }
}

/// Runs the constrained rho hedge neutralising `factors` over `set`.
pub fn run_benchmark(
    env: &HedgeEnv,
    set: &PathSet,
    factors: &[usize],
    surrogate: &SurrogateModel,
    reg: Regularization,
    track: bool,
) -> Result<HedgeRun> {
    let hedger = RhoHedger::new(surrogate, factors.to_vec(), reg, env.n_instruments())?;
    run_strategy(
        env,
        set,
        &hedger,
        RunOptions {
            constrained: true,
            track: track.then_some(surrogate),
        },
    )
}
