//! Self-financing hedging environment and strategy rollouts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::projection::{project_exposures, Caps};
use crate::dtafns::{factor_loadings, simulate_path_from, FactorPath, FactorState, Measure, ModelParams};
use crate::instruments::{HedgeInstrumentSpec, PayoffKernel, SwapSpec};
use crate::nn::Tape;
use crate::surrogate::SurrogateModel;
use crate::{Error, Result, Vec3};

/// A short swaption position hedged with swaps and a bank account, valued
/// with the pricing (risk-neutral) parameters.
#[derive(Debug, Clone)]
pub struct HedgeEnv {
    pricing: ModelParams,
    swaption: SwapSpec,
    instruments: Vec<HedgeInstrumentSpec>,
    v0: f64,
    caps: Caps,
    payoff: PayoffKernel,
    curve: Curve,
}

/// Bond loadings tabulated up to the longest maturity any contract needs.
#[derive(Debug, Clone)]
struct Curve {
    ln_a: Vec<f64>,
    /// `Δ B_τ`.
    db: Vec<Vec3>,
    b: Vec<Vec3>,
}

impl Curve {
    fn new(p: &ModelParams, max_tau: u32) -> Self {
        let mut curve = Curve {
            ln_a: Vec::new(),
            db: Vec::new(),
            b: Vec::new(),
        };
        for tau in 0..=max_tau {
            let l = factor_loadings(p, tau);
            curve.ln_a.push(l.a_tau.ln());
            curve.db.push(l.b_tau.map(|v| v * p.delta()));
            curve.b.push(l.b_tau);
        }
        curve
    }

    #[inline]
    fn bond(&self, x: &Vec3, tau: u32) -> f64 {
        let d = &self.db[tau as usize];
        (self.ln_a[tau as usize] - (d[0] * x[0] + d[1] * x[1] + d[2] * x[2])).exp()
    }

    /// Swap `[t+a, t+b]` seen at `t`: value and (optionally) factor gradient.
    fn quote(&self, x: &Vec3, a: u32, b: u32, strike: f64, notional: f64, delta: f64, grad: bool) -> (f64, Vec3) {
        let pa = self.bond(x, a);
        let pb = self.bond(x, b);
        let mut annuity = 0.0;
        let mut weighted = [0.0; 3];
        for tau in a + 1..=b {
            let p = self.bond(x, tau);
            annuity += p;
            if grad {
                let bl = &self.b[tau as usize];
                for k in 0..3 {
                    weighted[k] += bl[k] * p;
                }
            }
        }
        let kd = strike * delta;
        let value = notional * (pa - pb - kd * annuity);
        let mut g = [0.0; 3];
        if grad {
            let (ba, bb) = (&self.b[a as usize], &self.b[b as usize]);
            for k in 0..3 {
                g[k] = -notional * delta * (ba[k] * pa - bb[k] * pb - kd * weighted[k]);
            }
        }
        (value, g)
    }

    /// Par rate of the swap `[t+a, t+b]` seen at `t`.
    fn par_rate(&self, x: &Vec3, a: u32, b: u32, delta: f64) -> f64 {
        let annuity: f64 = (a + 1..=b).map(|tau| self.bond(x, tau)).sum();
        (self.bond(x, a) - self.bond(x, b)) / (delta * annuity)
    }
}

impl HedgeEnv {
    /// `v0` is the premium received for the swaption at month 0.
    pub fn new(
        pricing: ModelParams,
        swaption: SwapSpec,
        instruments: Vec<HedgeInstrumentSpec>,
        v0: f64,
        caps: Caps,
    ) -> Result<Self> {
        swaption.validate()?;
        caps.validate()?;
        if swaption.t_alpha == 0 {
            return Err(Error::param("t_alpha", "hedging needs at least one month to exercise"));
        }
        if instruments.is_empty() {
            return Err(Error::Empty("hedging instruments"));
        }
        for inst in &instruments {
            inst.validate()?;
            if let HedgeInstrumentSpec::UnderlyingFixedDates { underlying } = inst {
                if underlying.t_alpha < swaption.t_alpha {
                    return Err(Error::InvalidDate(format!(
                        "fixed-date hedge starting at month {} would accrue before exercise at {}",
                        underlying.t_alpha, swaption.t_alpha
                    )));
                }
            }
        }
        if !v0.is_finite() {
            return Err(Error::NonFinite("initial premium".into()));
        }
        let payoff = PayoffKernel::new(&pricing, &swaption);
        let max_tau = instruments
            .iter()
            .map(|inst| match inst {
                HedgeInstrumentSpec::UnderlyingFixedDates { underlying } => underlying.t_beta,
                HedgeInstrumentSpec::RollingParForward { start_offset, tenor, .. } => start_offset + tenor,
            })
            .max()
            .unwrap_or(0);
        let curve = Curve::new(&pricing, max_tau);
        Ok(Self {
            pricing,
            swaption,
            instruments,
            v0,
            caps,
            payoff,
            curve,
        })
    }

    pub fn pricing(&self) -> &ModelParams {
        &self.pricing
    }

    pub fn swaption(&self) -> &SwapSpec {
        &self.swaption
    }

    pub fn instruments(&self) -> &[HedgeInstrumentSpec] {
        &self.instruments
    }

    pub fn n_instruments(&self) -> usize {
        self.instruments.len()
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn caps(&self) -> &Caps {
        &self.caps
    }

    /// Number of rebalancing steps (months to exercise).
    pub fn horizon(&self) -> u32 {
        self.swaption.t_alpha
    }

    /// Precomputes every quantity a rollout needs along one physical path.
    pub fn market(&self, path: &FactorPath, with_gradients: bool) -> Result<PathMarket> {
        let horizon = self.horizon();
        if path.start_month != 0 || path.horizon() < horizon {
            return Err(Error::InvalidDate(format!(
                "hedging path must cover months 0..={horizon} (got start {} horizon {})",
                path.start_month,
                path.horizon()
            )));
        }
        let t_len = horizon as usize;
        let m = self.instruments.len();
        let p = &self.pricing;
        let delta = p.delta();
        let mut market = PathMarket {
            horizon,
            m,
            x: path.factors[..=t_len].to_vec(),
            growth: Vec::with_capacity(t_len),
            entry: vec![0.0; t_len * m],
            next: vec![0.0; t_len * m],
            gradients: if with_gradients { vec![[0.0; 3]; t_len * m] } else { Vec::new() },
            payoff: 0.0,
        };
        // Fixed-date contracts are quoted once per month and reused as both
        // the entry value at t and the mark at t.
        let mut fixed_cache: Vec<Option<Vec<f64>>> = vec![None; m];
        for (j, inst) in self.instruments.iter().enumerate() {
            if let HedgeInstrumentSpec::UnderlyingFixedDates { underlying } = inst {
                let mut values = Vec::with_capacity(t_len + 1);
                for t in 0..=t_len {
                    let (a, b) = (underlying.t_alpha - t as u32, underlying.t_beta - t as u32);
                    let grad = with_gradients && t < t_len;
                    let (value, g) = self.curve.quote(&market.x[t], a, b, underlying.strike, underlying.notional, delta, grad);
                    values.push(value);
                    if grad {
                        market.gradients[t * m + j] = g;
                    }
                }
                fixed_cache[j] = Some(values);
            }
        }
        for t in 0..t_len {
            let x = market.x[t];
            market.growth.push((p.short_rate(&x) * delta).exp());
            for (j, inst) in self.instruments.iter().enumerate() {
                let k = t * m + j;
                match (inst, &fixed_cache[j]) {
                    (_, Some(values)) => {
                        market.entry[k] = values[t];
                        market.next[k] = values[t + 1];
                    }
                    (
                        HedgeInstrumentSpec::RollingParForward {
                            start_offset,
                            tenor,
                            notional,
                        },
                        None,
                    ) => {
                        let (a, b) = (*start_offset, start_offset + tenor);
                        let strike = self.curve.par_rate(&x, a, b, delta);
                        // Struck at par, so the entry value is zero by construction.
                        market.entry[k] = 0.0;
                        if with_gradients {
                            market.gradients[k] = self.curve.quote(&x, a, b, strike, *notional, delta, true).1;
                        }
                        market.next[k] = self.curve.quote(&market.x[t + 1], a - 1, b - 1, strike, *notional, delta, false).0;
                    }
                    (HedgeInstrumentSpec::UnderlyingFixedDates { .. }, None) => unreachable!(),
                }
            }
        }
        market.payoff = self.payoff.payoff(&market.x[t_len]);
        Ok(market)
    }

    /// Physical path `i` of `set`.
    pub fn path(&self, set: &PathSet, i: u64) -> Result<FactorPath> {
        simulate_path_from(
            &set.sim,
            FactorState::origin(&set.sim),
            Measure::P,
            self.horizon(),
            set.seed,
            set.first_index + i,
        )
    }

    /// Markets for every path in `set`, built in parallel.
    pub fn markets(&self, set: &PathSet, with_gradients: bool) -> Result<Vec<PathMarket>> {
        (0..set.n_paths as u64)
            .into_par_iter()
            .map(|i| self.market(&self.path(set, i)?, with_gradients))
            .collect()
    }
}

/// A family of physical paths: substreams `first_index..first_index + n_paths` of `seed`.
#[derive(Debug, Clone)]
pub struct PathSet {
    /// Parameters used to simulate the paths (possibly perturbed).
    pub sim: ModelParams,
    pub n_paths: usize,
    pub seed: u64,
    pub first_index: u64,
}

impl PathSet {
    pub fn new(sim: ModelParams, n_paths: usize, seed: u64) -> Self {
        Self {
            sim,
            n_paths,
            seed,
            first_index: 0,
        }
    }
}

/// Path-level inputs to a rollout. Arrays indexed `[t * m + j]` cover rebalancing
/// months `t = 0..T−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMarket {
    pub horizon: u32,
    pub m: usize,
    /// Factors at months `0..=T`.
    pub x: Vec<Vec3>,
    /// `exp(r_t Δ)` for the bank account over `[t, t+1)`.
    pub growth: Vec<f64>,
    /// Value at `t` of the contract entered at `t`.
    pub entry: Vec<f64>,
    /// Value at `t+1` of the contract entered at `t`.
    pub next: Vec<f64>,
    /// Factor gradient at `t` of the contract entered at `t` (empty unless requested).
    pub gradients: Vec<Vec3>,
    pub payoff: f64,
}

/// What a strategy sees before rebalancing at month `t`.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub t: u32,
    pub ttm_months: u32,
    pub x: Vec3,
    /// Pre-rebalance portfolio value `V_t`.
    pub v: f64,
    /// Positions held over `[t−1, t)` (zero at `t = 0`).
    pub prev_phi: &'a [f64],
    pub values: &'a [f64],
    /// Instrument gradients; empty when the market was built without them.
    pub gradients: &'a [Vec3],
}

/// A hedging strategy: maps observations to raw (unprojected) positions.
pub trait PositionProvider: Sync {
    type Scratch: Send;

    fn n_instruments(&self) -> usize;

    fn scratch(&self) -> Self::Scratch;

    /// Whether [`Observation::gradients`] must be populated.
    fn needs_gradients(&self) -> bool {
        false
    }

    fn positions(&self, obs: &Observation<'_>, scratch: &mut Self::Scratch, out: &mut [f64]);
}

/// Holds nothing: the premium sits in the bank account.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPolicy {
    pub m: usize,
}

impl PositionProvider for ZeroPolicy {
    type Scratch = ();

    fn n_instruments(&self) -> usize {
        self.m
    }

    fn scratch(&self) {}

    fn positions(&self, _: &Observation<'_>, _: &mut (), out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Constant positions at every rebalance.
#[derive(Debug, Clone)]
pub struct StaticPolicy {
    pub phi: Vec<f64>,
}

impl PositionProvider for StaticPolicy {
    type Scratch = ();

    fn n_instruments(&self) -> usize {
        self.phi.len()
    }

    fn scratch(&self) {}

    fn positions(&self, _: &Observation<'_>, _: &mut (), out: &mut [f64]) {
        out.copy_from_slice(&self.phi);
    }
}

/// One path's ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub h: f64,
    pub payoff: f64,
    /// `V_0..V_T`.
    pub v: Vec<f64>,
    /// `φ_{t+1}` chosen at month `t`, row-major `T × M`.
    pub phi: Vec<f64>,
    /// `ψ_{t+1}`, cash after rebalancing at month `t`.
    pub psi: Vec<f64>,
}

/// Runs one path. Positions are projected onto the leverage caps when `caps` is given.
pub fn portfolio_rollout<P: PositionProvider>(
    market: &PathMarket,
    v0: f64,
    provider: &P,
    scratch: &mut P::Scratch,
    caps: Option<&Caps>,
) -> Result<PathRecord> {
    let t_len = market.horizon as usize;
    let m = market.m;
    if provider.n_instruments() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: provider.n_instruments(),
        });
    }
    if provider.needs_gradients() && market.gradients.is_empty() {
        return Err(Error::param("market", "strategy needs instrument gradients"));
    }
    let mut v = Vec::with_capacity(t_len + 1);
    let mut phi = vec![0.0; t_len * m];
    let mut psi = Vec::with_capacity(t_len);
    let zeros = vec![0.0; m];
    let mut raw = vec![0.0; m];
    let mut value = v0;
    v.push(value);
    for t in 0..t_len {
        let row = t * m..(t + 1) * m;
        let (done, rest) = phi.split_at_mut(t * m);
        let obs = Observation {
            t: t as u32,
            ttm_months: market.horizon - t as u32,
            x: market.x[t],
            v: value,
            prev_phi: if t == 0 { &zeros } else { &done[(t - 1) * m..] },
            values: &market.entry[row.clone()],
            gradients: if market.gradients.is_empty() { &[] } else { &market.gradients[row.clone()] },
        };
        provider.positions(&obs, scratch, &mut raw);
        let pos = &mut rest[..m];
        match caps {
            Some(c) => pos.copy_from_slice(&project_exposures(&raw, obs.values, value, c)),
            None => pos.copy_from_slice(&raw),
        }
        let cash = value - dot(pos, &market.entry[row.clone()]);
        value = dot(pos, &market.next[row]) + cash * market.growth[t];
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "portfolio value at month {} (positions {:?}, cash {cash})",
                t + 1,
                pos
            )));
        }
        psi.push(cash);
        v.push(value);
    }
    Ok(PathRecord {
        h: market.payoff - value,
        payoff: market.payoff,
        v,
        phi,
        psi,
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-path histories of a strategy over a path set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeRun {
    pub horizon: u32,
    pub m: usize,
    pub v0: f64,
    pub h: Vec<f64>,
    pub payoff: Vec<f64>,
    /// `n × T × M` positions; entry `(i, t, j)` is `φ_{t+1}` of instrument `j` on path `i`.
    pub phi: Vec<f64>,
    /// `n × (T+1)` portfolio values.
    pub v: Vec<f64>,
    /// `n × T` cash holdings after each rebalance.
    pub psi: Vec<f64>,
    /// `n × (T+1)` surrogate swaption prices along each path (exact payoff at `T`), if tracked.
    pub ps: Option<Vec<f64>>,
}

impl HedgeRun {
    pub fn n_paths(&self) -> usize {
        self.h.len()
    }

    pub fn phi_path(&self, i: usize) -> &[f64] {
        let w = self.horizon as usize * self.m;
        &self.phi[i * w..(i + 1) * w]
    }

    pub fn v_path(&self, i: usize) -> &[f64] {
        let w = self.horizon as usize + 1;
        &self.v[i * w..(i + 1) * w]
    }

    pub fn psi_path(&self, i: usize) -> &[f64] {
        let w = self.horizon as usize;
        &self.psi[i * w..(i + 1) * w]
    }

    pub fn ps_path(&self, i: usize) -> Option<&[f64]> {
        let w = self.horizon as usize + 1;
        self.ps.as_ref().map(|ps| &ps[i * w..(i + 1) * w])
    }

    /// Checks shapes and the `h = payoff − V_T` identity.
    pub fn validate(&self) -> Result<()> {
        let n = self.h.len();
        let t = self.horizon as usize;
        let shapes = [
            (self.payoff.len(), n),
            (self.phi.len(), n * t * self.m),
            (self.v.len(), n * (t + 1)),
            (self.psi.len(), n * t),
        ];
        for (got, expected) in shapes {
            if got != expected {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        if let Some(ps) = &self.ps {
            if ps.len() != n * (t + 1) {
                return Err(Error::DimensionMismatch {
                    expected: n * (t + 1),
                    got: ps.len(),
                });
            }
        }
        for i in 0..n {
            if self.h[i] != self.payoff[i] - self.v_path(i)[t] {
                return Err(Error::Format(format!("path {i}: h differs from payoff − V_T")));
            }
        }
        Ok(())
    }
}

/// Evaluation switches.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions<'a> {
    /// Apply the leverage projection to every rebalance.
    pub constrained: bool,
    /// Record surrogate swaption prices along each path (needed for DTE).
    pub track: Option<&'a SurrogateModel>,
}

/// Simulates, prices and hedges every path of `set` (in parallel, bit-reproducibly).
pub fn run_strategy<P: PositionProvider>(
    env: &HedgeEnv,
    set: &PathSet,
    provider: &P,
    opts: RunOptions<'_>,
) -> Result<HedgeRun> {
    if set.n_paths == 0 {
        return Err(Error::Empty("n_paths"));
    }
    let grads = provider.needs_gradients();
    let caps = opts.constrained.then_some(env.caps());
    let rows: Vec<(PathRecord, Option<Vec<f64>>)> = (0..set.n_paths as u64)
        .into_par_iter()
        .map_init(
            || (provider.scratch(), opts.track.map(|s| s.tape())),
            |(scratch, tape), i| {
                let market = env.market(&env.path(set, i)?, grads)?;
                let rec = portfolio_rollout(&market, env.v0(), provider, scratch, caps)?;
                let ps = match (opts.track, tape.as_mut()) {
                    (Some(s), Some(tape)) => Some(price_series(s, tape, &market)),
                    _ => None,
                };
                Ok((rec, ps))
            },
        )
        .collect::<Result<_>>()?;
    let n = rows.len();
    let t = env.horizon() as usize;
    let m = env.n_instruments();
    let mut run = HedgeRun {
        horizon: env.horizon(),
        m,
        v0: env.v0(),
        h: Vec::with_capacity(n),
        payoff: Vec::with_capacity(n),
        phi: Vec::with_capacity(n * t * m),
        v: Vec::with_capacity(n * (t + 1)),
        psi: Vec::with_capacity(n * t),
        ps: opts.track.map(|_| Vec::with_capacity(n * (t + 1))),
    };
    for (rec, ps) in rows {
        run.h.push(rec.h);
        run.payoff.push(rec.payoff);
        run.phi.extend_from_slice(&rec.phi);
        run.v.extend_from_slice(&rec.v);
        run.psi.extend_from_slice(&rec.psi);
        if let (Some(dst), Some(src)) = (run.ps.as_mut(), ps) {
            dst.extend_from_slice(&src);
        }
    }
    Ok(run)
}

fn price_series(s: &SurrogateModel, tape: &mut Tape, market: &PathMarket) -> Vec<f64> {
    let t_len = market.horizon as usize;
    let mut out: Vec<f64> = (0..t_len)
        .map(|t| s.price_with(tape, &market.x[t], market.horizon - t as u32))
        .collect();
    out.push(market.payoff);
    out
}

/// Largest violation of `ψ_{t+1} = V_t − φ·PFS_t` and
/// `V_{t+1} = φ·PFS_{t+1} + ψ_{t+1} e^{r_t Δ}` over all stored paths.
pub fn self_financing_residual(env: &HedgeEnv, set: &PathSet, run: &HedgeRun) -> Result<f64> {
    run.validate()?;
    if run.n_paths() != set.n_paths {
        return Err(Error::DimensionMismatch {
            expected: set.n_paths,
            got: run.n_paths(),
        });
    }
    let m = run.m;
    let worst: Vec<f64> = (0..set.n_paths)
        .into_par_iter()
        .map(|i| {
            let market = env.market(&env.path(set, i as u64)?, false)?;
            let (phi, v, psi) = (run.phi_path(i), run.v_path(i), run.psi_path(i));
            let mut worst: f64 = (market.payoff - run.payoff[i]).abs();
            for t in 0..run.horizon as usize {
                let pos = &phi[t * m..(t + 1) * m];
                let cash = v[t] - dot(pos, &market.entry[t * m..(t + 1) * m]);
                let next = dot(pos, &market.next[t * m..(t + 1) * m]) + psi[t] * market.growth[t];
                worst = worst.max((cash - psi[t]).abs()).max((next - v[t + 1]).abs());
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}
