//! Self-financing hedging of a short payer swaption: leverage projection,
//! risk objectives, deep-hedging training and the rho-hedging benchmark.

mod env;
mod objective;
mod policy;
mod projection;
mod rho;

pub use env::{
    portfolio_rollout, run_strategy, self_financing_residual, HedgeEnv, HedgeRun, Observation, PathMarket, PathRecord,
    PathSet, PositionProvider, RunOptions, StaticPolicy, ZeroPolicy,
};
pub use objective::{empirical_cvar, empirical_var, objective, objective_grad, ObjectiveKind};
pub use policy::{
    policy_spec, train_hedger, FeatureNorm, HedgeTrainConfig, HedgeTrainReport, PolicyModel, RolloutContext,
    POLICY_INPUTS, POLICY_WIDTHS,
};
pub use projection::{project_exposures, project_onto_caps, Caps};
pub use rho::{rho_label, rho_positions, rho_variants, run_benchmark, Regularization, RhoHedger};

use serde::{Deserialize, Serialize};

use crate::instruments::{HedgeInstrumentSpec, SwapSpec};
use crate::{Error, Result};

fn default_confidence() -> f64 {
    0.99
}

/// Everything that defines one hedging experiment apart from the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HedgeConfig {
    pub instruments: Vec<HedgeInstrumentSpec>,
    pub objective: ObjectiveKind,
    /// CVaR confidence used for training.
    #[serde(default = "default_confidence")]
    pub a: f64,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub reg: Regularization,
    #[serde(default)]
    pub train: HedgeTrainConfig,
}

impl HedgeConfig {
    /// The underlying swap, optionally with the rolling 10y×2y and 2y×2y companions.
    pub fn standard_instruments(underlying: &SwapSpec, m: usize) -> Result<Vec<HedgeInstrumentSpec>> {
        let all = [
            HedgeInstrumentSpec::UnderlyingFixedDates { underlying: *underlying },
            HedgeInstrumentSpec::rolling(120, 24),
            HedgeInstrumentSpec::rolling(24, 24),
        ];
        if !(1..=3).contains(&m) {
            return Err(Error::param("m", "between one and three hedging swaps"));
        }
        Ok(all[..m].to_vec())
    }

    pub fn new(instruments: Vec<HedgeInstrumentSpec>, objective: ObjectiveKind) -> Self {
        Self {
            instruments,
            objective,
            a: default_confidence(),
            caps: Caps::default(),
            reg: Regularization::default(),
            train: HedgeTrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.instruments.is_empty() {
            return Err(Error::Empty("hedging instruments"));
        }
        for inst in &self.instruments {
            inst.validate()?;
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::param("a", "confidence must lie in (0,1)"));
        }
        self.caps.validate()?;
        if self.reg.l1 < 0.0 || self.reg.l2 < 0.0 {
            return Err(Error::param("reg", "weights must be non-negative"));
        }
        self.train.validate()
    }
}
