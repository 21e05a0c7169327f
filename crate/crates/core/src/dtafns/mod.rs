//! Discrete-time arbitrage-free Nelson-Siegel term structure.
//!
//! Factors `X_t = (level, slope, curvature)` evolve monthly as
//! `X_{t+1} = X_t + κ(θ − X_t) + Σ Z_{t+1}` with correlated Gaussian
//! innovations. The short rate over `[t, t+1)` is `X⁽¹⁾ + X⁽²⁾`. Under the
//! T-forward measure the drift is shifted by `η_t = Δ Σ ρ Σ B_{T−t−1}`.

mod loadings;

pub use loadings::{b_loadings, compute_loadings, zeta0, zeta1, zeta2, Loadings};

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{substream, CorrelatedNormals};
use crate::{Error, Result, Vec3};

/// Maturities up to this many months are served from a precomputed table.
const LOADING_TABLE_MONTHS: u32 = 600;

/// Raw parameter values, field names as in the published calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamValues {
    pub lambda: f64,
    pub kappa_p: [[f64; 3]; 3],
    pub kappa_q: [[f64; 3]; 3],
    pub theta_p: Vec3,
    pub theta_q: Vec3,
    /// Diagonal of Σ (per-step volatilities).
    pub sigma: Vec3,
    pub rho: [[f64; 3]; 3],
    pub gamma: Vec3,
    pub x0: Vec3,
    /// Year fraction per step.
    pub delta: f64,
}

impl ParamValues {
    /// Calibrated values on Canadian spot curves, January 1986 to January 2022.
    pub fn published() -> Self {
        let lambda = 0.0233;
        Self {
            lambda,
            kappa_p: [[0.0075, 0.0, 0.0], [0.0, 0.0288, -0.0233], [0.0, 0.0, 0.0354]],
            kappa_q: [[0.0, 0.0, 0.0], [0.0, lambda, -lambda], [0.0, 0.0, lambda]],
            theta_p: [0.0, 0.0301, 0.0505],
            theta_q: [0.0, 0.0633, 0.0766],
            sigma: [0.0027, 0.0045, 0.0070],
            rho: [
                [1.0, -0.6303, -0.4097],
                [-0.6303, 1.0, 0.2993],
                [-0.4097, 0.2993, 1.0],
            ],
            gamma: [2.7923, 1.2016, 1.7167],
            x0: [-0.0312, 0.0384, 0.0688],
            delta: 1.0 / 12.0,
        }
    }
}

/// Validated, immutable model parameters with cached derived quantities.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ParamValues", into = "ParamValues")]
pub struct ModelParams {
    values: ParamValues,
    chol: [[f64; 3]; 3],
    loadings: Vec<Loadings>,
}

impl From<ModelParams> for ParamValues {
    fn from(p: ModelParams) -> Self {
        p.values
    }
}

impl TryFrom<ParamValues> for ModelParams {
    type Error = Error;
    fn try_from(v: ParamValues) -> Result<Self> {
        ModelParams::new(v)
    }
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl ModelParams {
    pub fn new(values: ParamValues) -> Result<Self> {
        let all_finite = values.lambda.is_finite()
            && values.delta.is_finite()
            && values.kappa_p.iter().flatten().all(|v| v.is_finite())
            && values.kappa_q.iter().flatten().all(|v| v.is_finite())
            && values.rho.iter().flatten().all(|v| v.is_finite())
            && [values.theta_p, values.theta_q, values.sigma, values.gamma, values.x0]
                .iter()
                .flatten()
                .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::param("params", "all entries must be finite"));
        }
        let lam = values.lambda;
        if !(lam > 0.0 && lam < 1.0) {
            return Err(Error::param("lambda", format!("must lie in (0,1), got {lam}")));
        }
        if !(values.delta > 0.0) {
            return Err(Error::param("delta", "must be positive"));
        }
        if values.sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::param("sigma", "entries must be strictly positive"));
        }
        let pattern = [[0.0, 0.0, 0.0], [0.0, lam, -lam], [0.0, 0.0, lam]];
        for i in 0..3 {
            for j in 0..3 {
                if (values.kappa_q[i][j] - pattern[i][j]).abs() > 1e-12 {
                    return Err(Error::param(
                        "kappa_q",
                        "must equal [[0,0,0],[0,λ,−λ],[0,0,λ]]",
                    ));
                }
            }
        }
        for i in 0..3 {
            if values.rho[i][i] != 1.0 {
                return Err(Error::param("rho", "diagonal must be one"));
            }
            for j in 0..i {
                if values.rho[i][j] != values.rho[j][i] {
                    return Err(Error::param("rho", "must be symmetric"));
                }
            }
        }
        let rho = Matrix3::from_fn(|i, j| values.rho[i][j]);
        let l = rho.cholesky().ok_or(Error::NotPositiveDefinite)?.l();
        let chol = [
            [l[(0, 0)], 0.0, 0.0],
            [l[(1, 0)], l[(1, 1)], 0.0],
            [l[(2, 0)], l[(2, 1)], l[(2, 2)]],
        ];
        let mut params = ModelParams {
            values,
            chol,
            loadings: Vec::new(),
        };
        params.loadings = (0..=LOADING_TABLE_MONTHS)
            .map(|tau| compute_loadings(&params, tau))
            .collect();
        Ok(params)
    }

    pub fn published() -> Self {
        Self::new(ParamValues::published()).expect("published parameters are valid")
    }

    pub fn values(&self) -> &ParamValues {
        &self.values
    }
    pub fn lambda(&self) -> f64 {
        self.values.lambda
    }
    pub fn delta(&self) -> f64 {
        self.values.delta
    }
    pub fn kappa_p(&self) -> &[[f64; 3]; 3] {
        &self.values.kappa_p
    }
    pub fn kappa_q(&self) -> &[[f64; 3]; 3] {
        &self.values.kappa_q
    }
    pub fn theta_p(&self) -> &Vec3 {
        &self.values.theta_p
    }
    pub fn theta_q(&self) -> &Vec3 {
        &self.values.theta_q
    }
    pub fn sigma(&self) -> &Vec3 {
        &self.values.sigma
    }
    pub fn rho(&self) -> &[[f64; 3]; 3] {
        &self.values.rho
    }
    pub fn gamma(&self) -> &Vec3 {
        &self.values.gamma
    }
    pub fn x0(&self) -> &Vec3 {
        &self.values.x0
    }
    /// Lower Cholesky factor of ρ.
    pub fn cholesky(&self) -> &[[f64; 3]; 3] {
        &self.chol
    }

    /// Residuals of the measure-change relations
    /// `κ^ℚ = κ^ℙ − diag(Σγ)` and `κ^ℚ θ^ℚ = κ^ℙ θ^ℙ`, as
    /// (max abs matrix residual, max abs vector residual).
    pub fn measure_change_residuals(&self) -> (f64, f64) {
        let v = &self.values;
        let mut kappa_res: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let shift = if i == j { v.sigma[i] * v.gamma[i] } else { 0.0 };
                kappa_res = kappa_res.max((v.kappa_q[i][j] - (v.kappa_p[i][j] - shift)).abs());
            }
        }
        let kq = mat_vec(&v.kappa_q, &v.theta_q);
        let kp = mat_vec(&v.kappa_p, &v.theta_p);
        let drift_res = (0..3).map(|i| (kq[i] - kp[i]).abs()).fold(0.0, f64::max);
        (kappa_res, drift_res)
    }

    /// Short rate `X⁽¹⁾ + X⁽²⁾` over the next period.
    #[inline]
    pub fn short_rate(&self, x: &Vec3) -> f64 {
        x[0] + x[1]
    }

    pub fn correlated_normals(&self) -> CorrelatedNormals {
        CorrelatedNormals::new(self.chol)
    }

    /// Copy of these parameters with new physical-measure κ and θ.
    pub(crate) fn with_physical(&self, kappa_p: [[f64; 3]; 3], theta_p: Vec3) -> Result<Self> {
        let mut values = self.values.clone();
        values.kappa_p = kappa_p;
        values.theta_p = theta_p;
        Ok(ModelParams {
            values,
            chol: self.chol,
            loadings: self.loadings.clone(),
        })
    }
}

#[inline]
pub(crate) fn mat_vec(m: &[[f64; 3]; 3], v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Factors at an integer month.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorState {
    pub x: Vec3,
    pub t: u32,
}

impl FactorState {
    pub fn new(x: Vec3, t: u32) -> Self {
        Self { x, t }
    }

    pub fn origin(params: &ModelParams) -> Self {
        Self { x: *params.x0(), t: 0 }
    }
}

/// Probability measure used for simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    P,
    Q,
    /// Forward measure whose numéraire is the bond maturing at this month.
    ForwardT(u32),
}

/// `A_τ` and `B_τ` for τ months to maturity.
pub fn factor_loadings(params: &ModelParams, tau: u32) -> Loadings {
    match params.loadings.get(tau as usize) {
        Some(l) => *l,
        None => compute_loadings(params, tau),
    }
}

/// Zero-coupon bond price `P(t, t+τ)`.
#[inline]
pub fn bond_price(params: &ModelParams, state: &FactorState, tau: u32) -> f64 {
    bond_price_at(params, &state.x, tau)
}

#[inline]
pub(crate) fn bond_price_at(params: &ModelParams, x: &Vec3, tau: u32) -> f64 {
    if tau == 0 {
        return 1.0;
    }
    let l = factor_loadings(params, tau);
    let b = &l.b_tau;
    l.a_tau * (-params.delta() * (b[0] * x[0] + b[1] * x[1] + b[2] * x[2])).exp()
}

/// Forward-measure drift shift `η = Δ Σ ρ Σ B_{τ−1}` with `τ = maturity − t`.
pub fn forward_drift_shift(params: &ModelParams, tau: u32) -> Vec3 {
    let b = factor_loadings(params, tau.saturating_sub(1)).b_tau;
    let s = params.sigma();
    let rho = params.rho();
    let sb = [s[0] * b[0], s[1] * b[1], s[2] * b[2]];
    let r = mat_vec(rho, &sb);
    let d = params.delta();
    [d * s[0] * r[0], d * s[1] * r[1], d * s[2] * r[2]]
}

/// One month of factor dynamics. `z` is an already-correlated standard normal draw.
pub fn step(params: &ModelParams, state: &FactorState, z: &Vec3, measure: Measure) -> Result<FactorState> {
    let (kappa, theta, shift) = match measure {
        Measure::P => (params.kappa_p(), params.theta_p(), [0.0; 3]),
        Measure::Q => (params.kappa_q(), params.theta_q(), [0.0; 3]),
        Measure::ForwardT(maturity) => {
            if maturity <= state.t {
                return Err(Error::InvalidDate(format!(
                    "forward measure maturity {maturity} must exceed current month {}",
                    state.t
                )));
            }
            (
                params.kappa_q(),
                params.theta_q(),
                forward_drift_shift(params, maturity - state.t),
            )
        }
    };
    let x = &state.x;
    let gap = [theta[0] - x[0], theta[1] - x[1], theta[2] - x[2]];
    let pull = mat_vec(kappa, &gap);
    let s = params.sigma();
    let next = [
        x[0] - shift[0] + pull[0] + s[0] * z[0],
        x[1] - shift[1] + pull[1] + s[1] * z[1],
        x[2] - shift[2] + pull[2] + s[2] * z[2],
    ];
    Ok(FactorState { x: next, t: state.t + 1 })
}

/// Affine one-step map `x' = c_t + M x + Σ z` precomputed for fast simulation.
#[derive(Debug, Clone)]
pub(crate) struct Stepper {
    m: [[f64; 3]; 3],
    /// Constant term `κθ`, before any forward-measure shift.
    c: Vec3,
    sigma: Vec3,
    measure: Measure,
    /// Forward shifts indexed by remaining months τ (index 0 unused).
    shifts: Vec<Vec3>,
    normals: CorrelatedNormals,
}

impl Stepper {
    pub(crate) fn new(params: &ModelParams, measure: Measure) -> Self {
        let (kappa, theta) = match measure {
            Measure::P => (params.kappa_p(), params.theta_p()),
            Measure::Q | Measure::ForwardT(_) => (params.kappa_q(), params.theta_q()),
        };
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = if i == j { 1.0 } else { 0.0 } - kappa[i][j];
            }
        }
        let shifts = match measure {
            Measure::ForwardT(maturity) => (0..=maturity)
                .map(|tau| if tau == 0 { [0.0; 3] } else { forward_drift_shift(params, tau) })
                .collect(),
            _ => Vec::new(),
        };
        Self {
            m,
            c: mat_vec(kappa, theta),
            sigma: *params.sigma(),
            measure,
            shifts,
            normals: params.correlated_normals(),
        }
    }

    #[inline]
    pub(crate) fn advance<R: rand::Rng + ?Sized>(&self, x: &Vec3, t: u32, rng: &mut R) -> Vec3 {
        let z = self.normals.sample(rng);
        self.advance_with(x, t, &z)
    }

    #[inline]
    pub(crate) fn advance_with(&self, x: &Vec3, t: u32, z: &Vec3) -> Vec3 {
        let mx = mat_vec(&self.m, x);
        let shift = match self.measure {
            Measure::ForwardT(maturity) => self.shifts[(maturity - t) as usize],
            _ => [0.0; 3],
        };
        let s = &self.sigma;
        [
            self.c[0] + mx[0] - shift[0] + s[0] * z[0],
            self.c[1] + mx[1] - shift[1] + s[1] * z[1],
            self.c[2] + mx[2] - shift[2] + s[2] * z[2],
        ]
    }
}

/// A simulated factor trajectory. Row `k` holds the factors at month `start_month + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPath {
    pub factors: Vec<Vec3>,
    pub start_month: u32,
    pub seed: u64,
    pub index: u64,
    pub measure: Measure,
}

impl FactorPath {
    pub fn horizon(&self) -> u32 {
        (self.factors.len() - 1) as u32
    }

    pub fn state(&self, k: usize) -> FactorState {
        FactorState {
            x: self.factors[k],
            t: self.start_month + k as u32,
        }
    }

    pub fn states(&self) -> impl Iterator<Item = FactorState> + '_ {
        (0..self.factors.len()).map(move |k| self.state(k))
    }
}

/// Simulates path `index` of the `(seed, ·)` family from `start`.
pub fn simulate_path_from(
    params: &ModelParams,
    start: FactorState,
    measure: Measure,
    horizon: u32,
    seed: u64,
    index: u64,
) -> Result<FactorPath> {
    if let Measure::ForwardT(maturity) = measure {
        if maturity < start.t + horizon {
            return Err(Error::InvalidDate(format!(
                "forward maturity {maturity} before simulation end {}",
                start.t + horizon
            )));
        }
    }
    let stepper = Stepper::new(params, measure);
    Ok(simulate_with(&stepper, start, horizon, seed, index))
}

pub(crate) fn simulate_with(stepper: &Stepper, start: FactorState, horizon: u32, seed: u64, index: u64) -> FactorPath {
    let mut rng = substream(seed, index);
    let mut factors = Vec::with_capacity(horizon as usize + 1);
    let mut x = start.x;
    factors.push(x);
    for k in 0..horizon {
        x = stepper.advance(&x, start.t + k, &mut rng);
        factors.push(x);
    }
    FactorPath {
        factors,
        start_month: start.t,
        seed,
        index,
        measure: stepper.measure,
    }
}

/// `n_paths` independent paths from the model origin. Path `i` uses substream `i`.
pub fn simulate_paths(
    params: &ModelParams,
    measure: Measure,
    n_paths: usize,
    horizon: u32,
    seed: u64,
) -> Result<Vec<FactorPath>> {
    simulate_path_range(params, measure, 0..n_paths as u64, horizon, seed)
}

/// Paths with the given substream indices, so batches can be drawn incrementally.
pub fn simulate_path_range(
    params: &ModelParams,
    measure: Measure,
    indices: std::ops::Range<u64>,
    horizon: u32,
    seed: u64,
) -> Result<Vec<FactorPath>> {
    if indices.is_empty() {
        return Err(Error::Empty("n_paths"));
    }
    if horizon == 0 {
        return Err(Error::param("horizon", "must be at least one month"));
    }
    if let Measure::ForwardT(maturity) = measure {
        if maturity < horizon {
            return Err(Error::InvalidDate(format!(
                "forward maturity {maturity} before horizon {horizon}"
            )));
        }
    }
    let stepper = Stepper::new(params, measure);
    let start = FactorState::origin(params);
    Ok(indices
        .into_par_iter()
        .map(|i| simulate_with(&stepper, start, horizon, seed, i))
        .collect())
}
