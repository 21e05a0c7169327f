//! Exact Shapley attribution of policy positions to their input features.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hedging::{HedgeEnv, HedgeRun, PathSet, PolicyModel, PositionProvider, POLICY_INPUTS};
use crate::rng::substream;
use crate::{Error, Result};

pub const FEATURE_NAMES: [&str; POLICY_INPUTS] = ["x1", "x2", "x3", "v", "ttm"];

/// Largest feature count enumerated exactly.
const MAX_FEATURES: usize = 16;

/// `n` synthetic rows whose features are drawn independently, each from a
/// uniformly chosen row of `pool` (the product of the pool's marginals).
pub fn marginal_background(pool: &[Vec<f64>], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let d = pool.first().ok_or(Error::Empty("background pool"))?.len();
    if n == 0 {
        return Err(Error::Empty("background draws"));
    }
    let mut rng = substream(seed, 0);
    Ok((0..n)
        .map(|_| (0..d).map(|j| pool[rng.random_range(0..pool.len())][j]).collect())
        .collect())
}

/// Exact Shapley values of `f` at `x`, absent features replaced by each
/// background row in turn. Returns `d × n_out` values (row-major) and the
/// baseline `mean_b f(b)`.
pub fn shapley_values<F>(mut f: F, n_out: usize, x: &[f64], background: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let d = x.len();
    if background.is_empty() {
        return Err(Error::Empty("background set"));
    }
    if d == 0 || d > MAX_FEATURES {
        return Err(Error::param("features", "between 1 and 16 features"));
    }
    if let Some(b) = background.iter().find(|b| b.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.len(),
        });
    }
    let n_sets = 1usize << d;
    let mut value = vec![0.0; n_sets * n_out];
    let mut z = vec![0.0; d];
    let mut out = vec![0.0; n_out];
    let scale = 1.0 / background.len() as f64;
    for mask in 0..n_sets {
        let acc = &mut value[mask * n_out..(mask + 1) * n_out];
        for b in background {
            for j in 0..d {
                z[j] = if mask >> j & 1 == 1 { x[j] } else { b[j] };
            }
            f(&z, &mut out);
            for (a, o) in acc.iter_mut().zip(&out) {
                *a += o * scale;
            }
        }
    }
    // w(s) = s! (d − s − 1)! / d!
    let mut weight = vec![0.0; d];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut c = 1.0;
        for k in 0..s {
            c *= (s - k) as f64 / (d - 1 - k) as f64;
        }
        *w = c / d as f64;
    }
    let mut phi = vec![0.0; d * n_out];
    for mask in 0..n_sets {
        let s = mask.count_ones() as usize;
        for j in 0..d {
            if mask >> j & 1 == 1 {
                continue;
            }
            let with = mask | 1 << j;
            for o in 0..n_out {
                phi[j * n_out + o] += weight[s] * (value[with * n_out + o] - value[mask * n_out + o]);
            }
        }
    }
    Ok((phi, value[..n_out].to_vec()))
}

/// Attributions for a batch of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub features: Vec<String>,
    pub n_outputs: usize,
    /// Model inputs, one row per sample.
    pub samples: Vec<Vec<f64>>,
    /// `n × d × n_outputs` Shapley values.
    pub values: Vec<f64>,
    /// `n × n_outputs` model outputs at the samples.
    pub outputs: Vec<f64>,
    /// Expected output over the background.
    pub baseline: Vec<f64>,
}

impl AttributionRecord {
    pub fn value(&self, sample: usize, feature: usize, output: usize) -> f64 {
        let d = self.features.len();
        self.values[(sample * d + feature) * self.n_outputs + output]
    }
}

/// Shapley attribution of the raw policy positions at `samples` (standardised
/// inputs), with `n_background` independent-marginal draws from `pool`.
pub fn shapley_attribution(
    policy: &PolicyModel,
    samples: &[Vec<f64>],
    pool: &[Vec<f64>],
    n_background: usize,
    seed: u64,
) -> Result<AttributionRecord> {
    let background = marginal_background(pool, n_background, seed)?;
    let m = policy.m();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = samples
        .par_iter()
        .map_init(
            || policy.scratch(),
            |tape, x| {
                let (phi, _) = shapley_values(
                    |z, out| out.copy_from_slice(&policy.eval_features(z, tape)),
                    m,
                    x,
                    &background,
                )?;
                Ok((phi, policy.eval_features(x, tape)))
            },
        )
        .collect::<Result<_>>()?;
    let mut tape = policy.scratch();
    let mut baseline = vec![0.0; m];
    for b in &background {
        for (acc, o) in baseline.iter_mut().zip(policy.eval_features(b, &mut tape)) {
            *acc += o / background.len() as f64;
        }
    }
    let mut rec = AttributionRecord {
        features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        n_outputs: m,
        samples: samples.to_vec(),
        values: Vec::new(),
        outputs: Vec::new(),
        baseline,
    };
    for (phi, out) in rows {
        rec.values.extend(phi);
        rec.outputs.extend(out);
    }
    Ok(rec)
}

/// Standardised policy inputs at `n` (path, month) cells of a stored run,
/// chosen uniformly with `seed`.
pub fn sample_policy_inputs(
    env: &HedgeEnv,
    set: &PathSet,
    run: &HedgeRun,
    policy: &PolicyModel,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if run.n_paths() != set.n_paths {
        return Err(Error::DimensionMismatch {
            expected: set.n_paths,
            got: run.n_paths(),
        });
    }
    let horizon = env.horizon();
    let mut rng = substream(seed, 0);
    let cells: Vec<(usize, u32)> = (0..n)
        .map(|_| (rng.random_range(0..run.n_paths()), rng.random_range(0..horizon)))
        .collect();
    cells
        .par_iter()
        .map(|&(i, t)| {
            let path = env.path(set, i as u64)?;
            let ttm = (horizon - t) as f64 * env.pricing().delta();
            Ok(policy.norm().features(&path.factors[t as usize], run.v_path(i)[t as usize], ttm).to_vec())
        })
        .collect()
}
