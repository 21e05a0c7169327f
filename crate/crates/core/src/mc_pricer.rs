//! Forward-measure Monte Carlo pricing of the payer swaption and the
//! surrogate training set built from it.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtafns::{bond_price_at, simulate_path_from, FactorState, Measure, ModelParams, Stepper};
use crate::instruments::{PayoffKernel, SwapSpec};
use crate::rng::{derive_seed, substream};
use crate::{Error, Result, Vec3};

/// Paths per deterministic reduction chunk.
const CHUNK: u64 = 1024;

/// Minimum number of inner paths accepted by the pricer.
pub const MIN_PATHS: usize = 100;

/// One labelled training example for the pricer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingSample {
    pub x: Vec3,
    pub ttm_months: u32,
    pub price: f64,
    pub stderr: f64,
}

/// Monte Carlo price and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McPrice {
    pub price: f64,
    pub stderr: f64,
}

/// `P(t,T_α) E^{T_α}[payoff]`, stepping the factors under the `T_α`-forward measure.
///
/// Path `i` draws from substream `i` of `seed`, so prices for different strikes
/// with the same seed use common random numbers.
pub fn price_swaption_mc(
    params: &ModelParams,
    state: &FactorState,
    spec: &SwapSpec,
    n_paths: usize,
    seed: u64,
) -> Result<McPrice> {
    spec.validate()?;
    let kernel = PayoffKernel::new(params, spec);
    forward_measure_mc(params, state, spec.t_alpha, n_paths, seed, |x| kernel.payoff(x))
}

/// `P(t,T) E^{T}[f(X_T)]` for an arbitrary terminal functional `f`.
pub fn forward_measure_mc<F>(
    params: &ModelParams,
    state: &FactorState,
    maturity: u32,
    n_paths: usize,
    seed: u64,
    f: F,
) -> Result<McPrice>
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    if state.t >= maturity {
        return Err(Error::InvalidDate(format!(
            "pricing month {} must precede exercise month {maturity}",
            state.t
        )));
    }
    if n_paths < MIN_PATHS {
        return Err(Error::SampleTooSmall(format!("{n_paths} paths, need at least {MIN_PATHS}")));
    }
    let stepper = Stepper::new(params, Measure::ForwardT(maturity));
    let n = n_paths as u64;
    let chunks: Vec<(f64, f64)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let mut rng = substream(seed, i);
                let mut x = state.x;
                for t in state.t..maturity {
                    x = stepper.advance(&x, t, &mut rng);
                }
                let v = f(&x);
                sum += v;
                sum_sq += v * v;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = chunks.iter().fold((0.0, 0.0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
    let nf = n_paths as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    let discount = bond_price_at(params, &state.x, maturity - state.t);
    Ok(McPrice {
        price: discount * mean,
        stderr: discount * (var / nf).sqrt(),
    })
}

/// Dataset generation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_samples: usize,
    /// Maturities are drawn uniformly from `1..=ttm_max` months.
    pub ttm_max: u32,
    /// Factor inputs come from physical paths observed at a month drawn
    /// uniformly from `0..=state_horizon`.
    pub state_horizon: u32,
    pub inner_paths: usize,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn new(n_samples: usize, ttm_max: u32, inner_paths: usize, seed: u64) -> Self {
        Self {
            n_samples,
            ttm_max,
            state_horizon: ttm_max,
            inner_paths,
            seed,
        }
    }
}

const TAG_DRAWS: u64 = 1;
const TAG_OUTER: u64 = 2;
const TAG_INNER: u64 = 3;

/// Inner pricing seed used for sample `index`.
pub fn sample_pricing_seed(seed: u64, index: u64) -> u64 {
    derive_seed(derive_seed(seed, TAG_INNER), index)
}

/// Builds the pricer training set.
///
/// Every sample keeps the tenor, strike and notional of `template` and only
/// varies the factor state and the time to exercise.
pub fn generate_pricing_dataset(params: &ModelParams, template: &SwapSpec, cfg: &DatasetConfig) -> Result<Vec<PricingSample>> {
    template.validate()?;
    if cfg.n_samples == 0 {
        return Err(Error::Empty("n_samples"));
    }
    if cfg.ttm_max == 0 {
        return Err(Error::param("ttm_max", "must be at least one month"));
    }
    if cfg.inner_paths < MIN_PATHS {
        return Err(Error::SampleTooSmall(format!(
            "{} inner paths, need at least {MIN_PATHS}",
            cfg.inner_paths
        )));
    }
    let tenor = template.tenor();
    let draw_seed = derive_seed(cfg.seed, TAG_DRAWS);
    let outer_seed = derive_seed(cfg.seed, TAG_OUTER);
    (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(draw_seed, i);
            let month = rng.random_range(0..=cfg.state_horizon);
            let ttm = rng.random_range(1..=cfg.ttm_max);
            let x = if month == 0 {
                *params.x0()
            } else {
                let path = simulate_path_from(params, FactorState::origin(params), Measure::P, month, outer_seed, i)?;
                path.factors[month as usize]
            };
            let spec = SwapSpec {
                t_alpha: ttm,
                t_beta: ttm + tenor,
                ..*template
            };
            let mc = price_swaption_mc(params, &FactorState::new(x, 0), &spec, cfg.inner_paths, sample_pricing_seed(cfg.seed, i))?;
            Ok(PricingSample {
                x,
                ttm_months: ttm,
                price: mc.price,
                stderr: mc.stderr,
            })
        })
        .collect()
}
