//! Terminal-error and path-level performance metrics.

use serde::{Deserialize, Serialize};

use crate::hedging::{empirical_cvar, HedgeRun};
use crate::{Error, Result};

/// Confidence of the reported tail metric.
const TAIL_CONFIDENCE: f64 = 0.99;

/// One row of the strategy comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mean: f64,
    pub rmse: f64,
    /// Root downside risk, `sqrt(mean(max(h, 0)²))`.
    pub rdr: f64,
    pub cvar99: f64,
    /// Fraction of paths with `h > 0`.
    pub p_under: f64,
    pub hrr: f64,
    pub ti: f64,
    pub dte: f64,
}

impl MetricsRecord {
    /// Column names in table order.
    pub const COLUMNS: [&'static str; 8] = ["Mean", "RMSE", "RDR", "CVaR99", "P(HE>0)", "HRR", "TI", "DTE"];

    pub fn values(&self) -> [f64; 8] {
        [
            self.mean,
            self.rmse,
            self.rdr,
            self.cvar99,
            self.p_under,
            self.hrr,
            self.ti,
            self.dte,
        ]
    }
}

/// Moments of a sample of terminal errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub mean: f64,
    pub rmse: f64,
    pub rdr: f64,
    pub p_under: f64,
}

pub fn error_summary(h: &[f64]) -> Result<ErrorSummary> {
    if h.is_empty() {
        return Err(Error::Empty("hedging errors"));
    }
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    let mse = h.iter().map(|e| e * e).sum::<f64>() / n;
    let dr = h.iter().map(|e| e.max(0.0).powi(2)).sum::<f64>() / n;
    let under = h.iter().filter(|&&e| e > 0.0).count() as f64 / n;
    Ok(ErrorSummary {
        mean,
        rmse: mse.sqrt(),
        rdr: dr.sqrt(),
        p_under: under,
    })
}

/// Sample standard deviation (`n − 1` denominator).
pub fn sample_std(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::SampleTooSmall("standard deviation needs two observations".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    Ok((x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// `1 − Std(h) / Std(h_unhedged)`.
pub fn hrr(h: &[f64], unhedged: &[f64]) -> Result<f64> {
    let base = sample_std(unhedged)?;
    if base == 0.0 {
        return Err(Error::param("unhedged", "errors have zero dispersion"));
    }
    Ok(1.0 - sample_std(h)? / base)
}

/// Mean over paths of `Σ_t Σ_k |φ_t − φ_{t−1}|` with `φ_0 = 0`.
pub fn trading_intensity(run: &HedgeRun) -> f64 {
    let m = run.m;
    let total: f64 = (0..run.n_paths())
        .map(|i| {
            let phi = run.phi_path(i);
            let first: f64 = phi[..m].iter().map(|p| p.abs()).sum();
            let rest: f64 = phi.windows(m + 1).map(|w| (w[m] - w[0]).abs()).sum();
            first + rest
        })
        .sum();
    total / run.n_paths() as f64
}

/// Mean over paths of `sqrt(mean_{t=1..T} (V_t − PS_t)²)`; `ps` is `n × (T+1)`.
pub fn dte(run: &HedgeRun, ps: &[f64]) -> Result<f64> {
    let w = run.horizon as usize + 1;
    if ps.len() != run.n_paths() * w {
        return Err(Error::DimensionMismatch {
            expected: run.n_paths() * w,
            got: ps.len(),
        });
    }
    let t_len = run.horizon as f64;
    let total: f64 = (0..run.n_paths())
        .map(|i| {
            let v = run.v_path(i);
            let p = &ps[i * w..(i + 1) * w];
            let ss: f64 = (1..w).map(|t| (v[t] - p[t]).powi(2)).sum();
            (ss / t_len).sqrt()
        })
        .sum();
    Ok(total / run.n_paths() as f64)
}

/// All table metrics of `run` against the zero-position benchmark on the same paths.
pub fn compute_metrics(run: &HedgeRun, unhedged: &HedgeRun, ps: &[f64]) -> Result<MetricsRecord> {
    if run.n_paths() != unhedged.n_paths() {
        return Err(Error::DimensionMismatch {
            expected: run.n_paths(),
            got: unhedged.n_paths(),
        });
    }
    let s = error_summary(&run.h)?;
    Ok(MetricsRecord {
        mean: s.mean,
        rmse: s.rmse,
        rdr: s.rdr,
        cvar99: empirical_cvar(&run.h, TAIL_CONFIDENCE)?,
        p_under: s.p_under,
        hrr: hrr(&run.h, &unhedged.h)?,
        ti: trading_intensity(run),
        dte: dte(run, ps)?,
    })
}
