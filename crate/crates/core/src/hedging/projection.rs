//! Leverage caps on dollar exposures.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-leg and gross exposure multipliers plus the capital buffer of the
/// stabilised budget `|V_t| + buffer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    pub l_per: f64,
    pub l_gt: f64,
    pub buffer: f64,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            l_per: 2.0,
            l_gt: 3.0,
            buffer: 1.0,
        }
    }
}

impl Caps {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("l_per", self.l_per), ("l_gt", self.l_gt)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if !(self.buffer.is_finite() && self.buffer >= 0.0) {
            return Err(Error::param("buffer", "must be non-negative"));
        }
        Ok(())
    }

    /// `|v| + buffer`.
    pub fn budget(&self, v: f64) -> f64 {
        v.abs() + self.buffer
    }
}

/// Euclidean projection of `e` onto `{0 ≤ x_i ≤ leg_cap, Σ x_i ≤ gross_cap}`.
///
/// The solution is `clamp(e − μ, 0, leg_cap)` for the smallest `μ ≥ 0` meeting
/// the gross cap. `μ` is bracketed by bisection and then solved exactly on the
/// resulting active set.
pub fn project_onto_caps(e: &[f64], leg_cap: f64, gross_cap: f64) -> Vec<f64> {
    let clamp = |mu: f64| -> Vec<f64> { e.iter().map(|&v| (v - mu).clamp(0.0, leg_cap)).collect() };
    let total = |x: &[f64]| x.iter().sum::<f64>();
    let x0 = clamp(0.0);
    if total(&x0) <= gross_cap {
        return x0;
    }
    let mut lo = 0.0;
    let mut hi = e.iter().cloned().fold(0.0, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(&clamp(mid)) > gross_cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // On the bracket the active set is fixed: free legs satisfy 0 < e_i − μ < leg_cap.
    let mid = 0.5 * (lo + hi);
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut capped = 0.0;
    for &v in e {
        let d = v - mid;
        if d >= leg_cap {
            capped += leg_cap;
        } else if d > 0.0 {
            free_sum += v;
            free += 1;
        }
    }
    if free > 0 {
        let mu = (free_sum + capped - gross_cap) / free as f64;
        let x = clamp(mu.max(0.0));
        if total(&x) <= gross_cap && x.iter().all(|&v| v <= leg_cap) {
            return x;
        }
    }
    clamp(hi)
}

/// Caps the dollar exposures `|φ_i|·|value_i|` and maps them back to positions
/// with the original signs.
///
/// Legs with zero exposure (zero position or a par instrument worth nothing)
/// consume no budget and keep their raw position.
pub fn project_exposures(raw_phi: &[f64], values: &[f64], v: f64, caps: &Caps) -> Vec<f64> {
    let budget = caps.budget(v);
    let e: Vec<f64> = raw_phi.iter().zip(values).map(|(p, val)| (p * val).abs()).collect();
    let x = project_onto_caps(&e, caps.l_per * budget, caps.l_gt * budget);
    raw_phi
        .iter()
        .zip(e.iter().zip(&x))
        .map(|(&p, (&ei, &xi))| if ei > 0.0 { p * (xi / ei) } else { p })
        .collect()
}
