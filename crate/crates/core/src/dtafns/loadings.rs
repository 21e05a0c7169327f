//! Exponential-affine zero-coupon bond loadings.
//!
//! `P(t, t+τ) = A_τ · exp(−Δ · B_τᵀ X_t)` with τ in months. `B_τ` is
//! expressed per step (so `B_τ⁽¹⁾ = τ`); `Δ` converts to years.

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::Vec3;

/// Bond loadings for one maturity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Loadings {
    pub tau: u32,
    pub a_tau: f64,
    pub b_tau: Vec3,
}

impl Loadings {
    pub const MATURED: Loadings = Loadings {
        tau: 0,
        a_tau: 1.0,
        b_tau: [0.0; 3],
    };
}

/// `Σ_{u=1}^{τ−1} r^u`
pub fn zeta0(r: f64, tau: u32) -> f64 {
    if use_closed_form(r, tau) {
        (r - r.powi(tau as i32)) / (1.0 - r)
    } else {
        power_sum(r, tau, |_| 1.0)
    }
}

/// `Σ_{u=1}^{τ−1} u·r^u`
pub fn zeta1(r: f64, tau: u32) -> f64 {
    if use_closed_form(r, tau) {
        let t = tau as f64;
        let rt = r.powi(tau as i32);
        (r - t * rt + (t - 1.0) * rt * r) / ((1.0 - r) * (1.0 - r))
    } else {
        power_sum(r, tau, |u| u)
    }
}

/// `Σ_{u=1}^{τ−1} u²·r^u`
pub fn zeta2(r: f64, tau: u32) -> f64 {
    if use_closed_form(r, tau) {
        let t = tau as f64;
        let rt = r.powi(tau as i32);
        let num = -(t - 1.0) * (t - 1.0) * rt * r * r + (2.0 * t * t - 2.0 * t - 1.0) * rt * r
            - t * t * rt
            + r * r
            + r;
        num / ((1.0 - r) * (1.0 - r) * (1.0 - r))
    } else {
        power_sum(r, tau, |u| u * u)
    }
}

// The closed forms cancel catastrophically when r is close to one or the
// number of terms is small.
fn use_closed_form(r: f64, tau: u32) -> bool {
    tau > 8 && (1.0 - r) >= 0.1
}

fn power_sum(r: f64, tau: u32, weight: impl Fn(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut p = 1.0;
    for u in 1..tau {
        p *= r;
        acc += weight(u as f64) * p;
    }
    acc
}

/// Closed-form `(A_τ, B_τ)` for the given parameters.
pub fn compute_loadings(params: &ModelParams, tau: u32) -> Loadings {
    if tau == 0 {
        return Loadings::MATURED;
    }
    let lam = params.lambda();
    let delta = params.delta();
    let s = params.sigma();
    let rho = params.rho();
    let theta_q = params.theta_q();
    let o = 1.0 - lam;
    let o2 = o * o;
    let t = tau as f64;
    let b = b_loadings(lam, tau);

    let v11 = s[0] * s[0] * t * (t - 1.0) * (2.0 * t - 1.0) / 6.0;
    let v22 = s[1] * s[1] / (lam * lam)
        * (t - 2.0 * (1.0 - o.powi(tau as i32)) / lam + (1.0 - o.powi(2 * tau as i32)) / (1.0 - o2));
    let v12 = rho[0][1] * s[0] * s[1] / lam * (t * (t - 1.0) / 2.0 - zeta1(o, tau));

    let (v33, v13, v23) = if tau > 1 {
        let m = tau - 1;
        let v33 = s[2] * s[2] / (lam * lam)
            * (t - 2.0 + zeta0(o2, m) + lam * lam * zeta2(o2, m)
                - 2.0 * zeta0(o, m)
                - 2.0 * lam * zeta1(o, m)
                + 2.0 * lam * zeta1(o2, m));
        let v13 = rho[0][2] * s[0] * s[2] / lam
            * (t * (t - 1.0) / 2.0 - 1.0 - zeta0(o, m) - (lam + 1.0) * zeta1(o, m)
                - lam * zeta2(o, m));
        let v23 = rho[1][2]
            * s[1]
            * s[2]
            * ((t - 2.0 - (2.0 - lam) * zeta0(o, m) + o * zeta0(o2, m)) / (lam * lam)
                + (-zeta1(o, m) + o * zeta1(o2, m)) / lam);
        (v33, v13, v23)
    } else {
        (0.0, 0.0, 0.0)
    };
    // v_τ sums the full 3×3 array, so each off-diagonal term appears twice.
    let v = v11 + v22 + v33 + 2.0 * (v12 + v13 + v23);

    let log_a = -delta * theta_q[1] * (b[0] - b[1]) + delta * theta_q[2] * b[2] + 0.5 * delta * delta * v;
    Loadings {
        tau,
        a_tau: log_a.exp(),
        b_tau: b,
    }
}

/// `B_τ` alone; depends only on λ.
pub fn b_loadings(lambda: f64, tau: u32) -> Vec3 {
    if tau == 0 {
        return [0.0; 3];
    }
    let o = 1.0 - lambda;
    let t = tau as f64;
    // Geometric sums rather than `(1 − oᵗ)/λ`, which loses digits for small τ.
    let b2 = 1.0 + zeta0(o, tau);
    let b3 = if tau == 1 {
        0.0
    } else {
        1.0 + zeta0(o, tau - 1) - (t - 1.0) * o.powi(tau as i32 - 1)
    };
    [t, b2, b3]
}
