//! Experiment configuration: one JSON document, unknown keys rejected.

use serde::{Deserialize, Serialize};
use swaphedge::dtafns::{ModelParams, ParamValues};
use swaphedge::hedging::{rho_variants, Caps, HedgeConfig, HedgeTrainConfig, ObjectiveKind, Regularization};
use swaphedge::instruments::{atm_strike, HedgeInstrumentSpec, SwapSpec};
use swaphedge::mc_pricer::DatasetConfig;
use swaphedge::nn::sha256_hex;
use swaphedge::rng::derive_seed;
use swaphedge::surrogate::PricerConfig;

use crate::error::{CliError, Result};

const TAG_DATASET: u64 = 1;
const TAG_PRICER: u64 = 2;
const TAG_HEDGER: u64 = 3;
const TAG_CALIBRATION: u64 = 4;
const TAG_OOS: u64 = 5;
const TAG_SHAPLEY: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Published,
}

/// Model parameters: a named preset or inline values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Preset(Preset),
    Values(ParamValues),
}

impl Default for ModelSource {
    fn default() -> Self {
        ModelSource::Preset(Preset::Published)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrikeKeyword {
    Atm,
}

/// A fixed rate or `"atm"` for the forward swap rate at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Strike {
    Fixed(f64),
    Keyword(StrikeKeyword),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwaptionConfig {
    /// Exercise month.
    pub t_alpha: u32,
    /// Underlying swap length in months.
    pub tenor: u32,
    pub strike: Strike,
    pub notional: f64,
}

impl Default for SwaptionConfig {
    fn default() -> Self {
        Self {
            t_alpha: 60,
            tenor: 120,
            strike: Strike::Fixed(0.025083),
            notional: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub n_samples: usize,
    pub inner_paths: usize,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            inner_paths: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricerSettings {
    pub lr: f64,
    pub max_epochs: usize,
    pub batch: usize,
    pub patience: usize,
    pub val_fraction: f64,
}

impl Default for PricerSettings {
    fn default() -> Self {
        let t = PricerConfig::standard(0).train;
        Self {
            lr: t.lr,
            max_epochs: t.max_epochs,
            batch: t.batch,
            patience: t.patience,
            val_fraction: t.val_fraction,
        }
    }
}

fn all_objectives() -> Vec<ObjectiveKind> {
    vec![ObjectiveKind::Mse, ObjectiveKind::Dr, ObjectiveKind::Cvar]
}

fn default_confidence() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HedgeSettings {
    #[serde(default = "all_objectives")]
    pub objectives: Vec<ObjectiveKind>,
    #[serde(default = "default_confidence")]
    pub a: f64,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub reg: Regularization,
    /// Seeds are derived from the top-level seed; `train.seed` must stay 0.
    #[serde(default)]
    pub train: HedgeTrainConfig,
}

impl Default for HedgeSettings {
    fn default() -> Self {
        Self {
            objectives: all_objectives(),
            a: default_confidence(),
            caps: Caps::default(),
            reg: Regularization::default(),
            train: HedgeTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub n_oos: usize,
    /// Factor subsets (1-based) for the rho benchmarks; every subset of size
    /// `M` when absent.
    pub rho: Option<Vec<Vec<usize>>>,
    /// Policy samples attributed with Shapley values (0 disables).
    pub shapley_samples: usize,
    pub shapley_background: usize,
    /// Write residual factor exposure series for each strategy.
    pub residuals: bool,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            n_oos: 100_000,
            rho: None,
            shapley_samples: 0,
            shapley_background: 256,
            residuals: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub c_kappa: f64,
    pub c_theta: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default)]
    pub swaption: SwaptionConfig,
    /// Number of hedging swaps (underlying, then 10y×2y, then 2y×2y).
    #[serde(default = "one")]
    pub n_swaps: usize,
    /// Explicit instrument list; overrides `n_swaps`.
    #[serde(default)]
    pub instruments: Option<Vec<HedgeInstrumentSpec>>,
    #[serde(default)]
    pub dataset: DatasetSettings,
    #[serde(default)]
    pub pricer: PricerSettings,
    #[serde(default)]
    pub hedge: HedgeSettings,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
    #[serde(default)]
    pub output: Option<std::path::PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

/// Every derived quantity a pipeline step needs.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub params: ModelParams,
    pub swaption: SwapSpec,
    pub instruments: Vec<HedgeInstrumentSpec>,
    pub dataset: DatasetConfig,
    pub pricer: PricerConfig,
    pub rho: Vec<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Missing(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical JSON; its SHA-256 identifies the experiment.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn params(&self) -> Result<ModelParams> {
        let values = match &self.model {
            ModelSource::Preset(Preset::Published) => ParamValues::published(),
            ModelSource::Values(v) => v.clone(),
        };
        Ok(ModelParams::new(values)?)
    }

    pub fn dataset_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_DATASET)
    }

    pub fn pricer_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_PRICER)
    }

    /// Seed of the agent trained on `kind`; independent of the objective list order.
    pub fn hedger_seed(&self, kind: ObjectiveKind) -> u64 {
        let k = match kind {
            ObjectiveKind::Mse => 0,
            ObjectiveKind::Dr => 1,
            ObjectiveKind::Cvar => 2,
        };
        derive_seed(derive_seed(self.seed, TAG_HEDGER), k)
    }

    pub fn calibration_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_CALIBRATION)
    }

    pub fn oos_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_OOS)
    }

    pub fn shapley_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_SHAPLEY)
    }

    /// Replaces `"atm"` by the numeric forward swap rate so the stored
    /// config is self-contained.
    pub fn resolve_strike(&mut self) -> Result<()> {
        if let Strike::Keyword(StrikeKeyword::Atm) = self.swaption.strike {
            let params = self.params()?;
            let s = &self.swaption;
            let k = atm_strike(&params, s.t_alpha, s.t_alpha + s.tenor)?;
            self.swaption.strike = Strike::Fixed(k);
        }
        Ok(())
    }

    /// Validates the document and derives the concrete objects.
    pub fn resolve(&self) -> Result<Resolved> {
        let params = self.params()?;
        let s = &self.swaption;
        if s.t_alpha == 0 {
            return Err(CliError::Config("swaption.t_alpha must be at least one month".into()));
        }
        let strike = match s.strike {
            Strike::Fixed(k) => k,
            Strike::Keyword(StrikeKeyword::Atm) => atm_strike(&params, s.t_alpha, s.t_alpha + s.tenor)?,
        };
        let swaption = SwapSpec::new(s.t_alpha, s.t_alpha + s.tenor, strike, s.notional)?;
        let instruments = match &self.instruments {
            Some(list) => list.clone(),
            None => HedgeConfig::standard_instruments(&swaption, self.n_swaps)?,
        };
        let m = instruments.len();
        let hedge = HedgeConfig {
            instruments: instruments.clone(),
            objective: ObjectiveKind::Mse,
            a: self.hedge.a,
            caps: self.hedge.caps,
            reg: self.hedge.reg,
            train: self.hedge.train.clone(),
        };
        hedge.validate()?;
        if self.hedge.train.seed != 0 {
            return Err(CliError::Config(
                "hedge.train.seed is derived from the top-level seed; leave it unset".into(),
            ));
        }
        let mut seen = Vec::new();
        for k in &self.hedge.objectives {
            if seen.contains(k) {
                return Err(CliError::Config(format!("objective {} listed twice", k.label())));
            }
            seen.push(*k);
        }
        let rho = match &self.evaluation.rho {
            Some(sets) => sets
                .iter()
                .map(|set| {
                    if set.is_empty() || set.len() > m || set.iter().any(|&k| !(1..=3).contains(&k)) {
                        return Err(CliError::Config(format!(
                            "rho factor set {set:?} must hold 1..={m} factors numbered 1 to 3"
                        )));
                    }
                    Ok(set.iter().map(|k| k - 1).collect())
                })
                .collect::<Result<_>>()?,
            None => rho_variants(m),
        };
        if self.evaluation.n_oos < 100 {
            return Err(CliError::Config("evaluation.n_oos must be at least 100 (CVaR99)".into()));
        }
        if let Some(p) = &self.perturbation {
            if !(p.c_kappa > 0.0 && p.c_theta > 0.0) {
                return Err(CliError::Config("perturbation constants must be positive".into()));
            }
        }
        let dataset = DatasetConfig::new(self.dataset.n_samples, s.t_alpha, self.dataset.inner_paths, self.dataset_seed());
        let mut pricer = PricerConfig::standard(self.pricer_seed());
        pricer.train.lr = self.pricer.lr;
        pricer.train.max_epochs = self.pricer.max_epochs;
        pricer.train.batch = self.pricer.batch;
        pricer.train.patience = self.pricer.patience;
        pricer.train.val_fraction = self.pricer.val_fraction;
        pricer.train.validate()?;
        Ok(Resolved {
            params,
            swaption,
            instruments,
            dataset,
            pricer,
            rho,
        })
    }
}
