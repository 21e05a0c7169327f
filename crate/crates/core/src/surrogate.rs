//! KAN swaption pricer: (factors, time to exercise) → price, with
//! central-difference factor sensitivities.

use serde::{Deserialize, Serialize};

use crate::dtafns::ModelParams;
use crate::instruments::{PayoffKernel, SwapSpec};
use crate::mc_pricer::PricingSample;
use crate::nn::{Checkpoint, Dataset, EpochRecord, NetSpec, Network, Standardizer, Tape, TrainConfig};
use crate::{Error, Result, Vec3};

/// Default central-difference step in factor units.
pub const DEFAULT_BUMP: f64 = 1e-4;

/// Swaption terms shared by every price the surrogate produces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwaptionTerms {
    pub tenor: u32,
    pub strike: f64,
    pub notional: f64,
    /// Largest supported time to exercise in months.
    pub max_ttm: u32,
}

impl SwaptionTerms {
    pub fn from_spec(spec: &SwapSpec) -> Self {
        Self {
            tenor: spec.tenor(),
            strike: spec.strike,
            notional: spec.notional,
            max_ttm: spec.t_alpha,
        }
    }

    fn expiring_swap(&self) -> SwapSpec {
        SwapSpec {
            t_alpha: 0,
            t_beta: self.tenor,
            strike: self.strike,
            notional: self.notional,
        }
    }
}

/// Provenance of a trained pricer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateManifest {
    pub dataset_hash: String,
    pub seed: u64,
    pub n_samples: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub val_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurrogateMeta {
    terms: SwaptionTerms,
    input_norm: Standardizer,
    target_mean: f64,
    target_scale: f64,
    model: crate::dtafns::ParamValues,
    manifest: SurrogateManifest,
}

/// Trained pricer. Holds the model parameters so that the exercise-date
/// boundary can be evaluated exactly.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    net: Network,
    params: Vec<f64>,
    meta: SurrogateMeta,
    model: ModelParams,
    payoff: PayoffKernel,
    delta: f64,
}

/// Pricer training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricerConfig {
    pub widths: Vec<usize>,
    pub n_centers: usize,
    pub center_range: [f64; 2],
    pub train: TrainConfig,
}

impl PricerConfig {
    /// KAN 4→8→16→8→1 with 8 centers on [−2, 2].
    pub fn standard(seed: u64) -> Self {
        Self {
            widths: vec![8, 16, 8],
            n_centers: 8,
            center_range: [-2.0, 2.0],
            train: TrainConfig::pricer(seed),
        }
    }

    pub fn net_spec(&self) -> NetSpec {
        NetSpec::Kan {
            input_dim: 4,
            widths: self.widths.clone(),
            output_dim: 1,
            n_centers: self.n_centers,
            center_range: self.center_range,
        }
    }
}

/// Outcome of pricer training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricerReport {
    /// Held-out mean squared error in price units.
    pub val_mse: f64,
    pub train_mse: f64,
    pub history: Vec<EpochRecord>,
}

fn raw_features(x: &Vec3, ttm_months: u32, delta: f64) -> [f64; 4] {
    [x[0], x[1], x[2], ttm_months as f64 * delta]
}

/// Fits the KAN to a pricing dataset built for the swaption `terms`.
pub fn train_pricer(
    model: &ModelParams,
    terms: SwaptionTerms,
    samples: &[PricingSample],
    dataset_hash: &str,
    cfg: &PricerConfig,
) -> Result<(SurrogateModel, PricerReport)> {
    if samples.is_empty() {
        return Err(Error::Empty("pricing dataset"));
    }
    if let Some(s) = samples.iter().find(|s| s.ttm_months == 0 || s.ttm_months > terms.max_ttm) {
        return Err(Error::InvalidDate(format!(
            "sample maturity {} outside 1..={}",
            s.ttm_months, terms.max_ttm
        )));
    }
    let delta = model.delta();
    let raw: Vec<f64> = samples
        .iter()
        .flat_map(|s| raw_features(&s.x, s.ttm_months, delta))
        .collect();
    let input_norm = Standardizer::fit(&raw, 4)?;
    let prices: Vec<f64> = samples.iter().map(|s| s.price).collect();
    let n = prices.len() as f64;
    let target_mean = prices.iter().sum::<f64>() / n;
    let spread = (prices.iter().map(|p| (p - target_mean).powi(2)).sum::<f64>() / n).sqrt();
    // A constant target needs no network: its scale is zero.
    let target_scale = if spread > 1e-12 * target_mean.abs() { spread } else { 0.0 };
    let unit = if target_scale > 0.0 { target_scale } else { 1.0 };
    let targets: Vec<f64> = prices.iter().map(|p| (p - target_mean) / unit).collect();
    let data = Dataset::new(input_norm.apply_rows(&raw), targets, 4, 1)?;

    let spec = cfg.net_spec();
    let outcome = crate::nn::train_supervised(&spec, &data, &cfg.train)?;
    let net = Network::new(spec)?;
    let meta = SurrogateMeta {
        terms,
        input_norm,
        target_mean,
        target_scale,
        model: model.values().clone(),
        manifest: SurrogateManifest {
            dataset_hash: dataset_hash.to_string(),
            seed: cfg.train.seed,
            n_samples: samples.len(),
            epochs_run: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            val_mse: f64::NAN,
        },
    };
    let mut surrogate = SurrogateModel::assemble(net, outcome.params, meta)?;
    let mse = |rows: &[usize]| -> Result<f64> {
        let mut acc = 0.0;
        for &i in rows {
            let s = &samples[i];
            acc += (surrogate.price(&s.x, s.ttm_months)? - s.price).powi(2);
        }
        Ok(acc / rows.len() as f64)
    };
    let val_mse = mse(&outcome.val_indices)?;
    let train_mse = mse(&outcome.train_indices)?;
    if !val_mse.is_finite() {
        return Err(Error::Divergence("non-finite held-out error".into()));
    }
    surrogate.meta.manifest.val_mse = val_mse;
    Ok((
        surrogate,
        PricerReport {
            val_mse,
            train_mse,
            history: outcome.history,
        },
    ))
}

impl SurrogateModel {
    fn assemble(net: Network, params: Vec<f64>, meta: SurrogateMeta) -> Result<Self> {
        if params.len() != net.n_params() {
            return Err(Error::DimensionMismatch {
                expected: net.n_params(),
                got: params.len(),
            });
        }
        let model = ModelParams::new(meta.model.clone())?;
        let payoff = PayoffKernel::new(&model, &meta.terms.expiring_swap());
        let delta = model.delta();
        Ok(Self {
            net,
            params,
            meta,
            model,
            payoff,
            delta,
        })
    }

    pub fn terms(&self) -> &SwaptionTerms {
        &self.meta.terms
    }

    pub fn manifest(&self) -> &SurrogateManifest {
        &self.meta.manifest
    }

    pub fn model_params(&self) -> &ModelParams {
        &self.model
    }

    pub fn tape(&self) -> Tape {
        self.net.tape()
    }

    fn check_ttm(&self, ttm_months: u32) -> Result<()> {
        if ttm_months > self.meta.terms.max_ttm {
            return Err(Error::InvalidDate(format!(
                "time to exercise {ttm_months} outside 0..={}",
                self.meta.terms.max_ttm
            )));
        }
        Ok(())
    }

    /// Price at time to exercise `ttm_months`; the exact payoff when it is zero.
    pub fn price(&self, x: &Vec3, ttm_months: u32) -> Result<f64> {
        self.check_ttm(ttm_months)?;
        let mut tape = self.net.tape();
        Ok(self.price_with(&mut tape, x, ttm_months))
    }

    /// Like [`SurrogateModel::price`] with caller-owned scratch and no range check.
    #[inline]
    pub(crate) fn price_with(&self, tape: &mut Tape, x: &Vec3, ttm_months: u32) -> f64 {
        if ttm_months == 0 {
            return self.payoff.payoff(x);
        }
        let raw = raw_features(x, ttm_months, self.delta);
        let mut z = [0.0; 4];
        self.meta.input_norm.apply(&raw, &mut z);
        self.net.forward_unchecked(&self.params, &z, tape);
        let y = self.meta.target_mean + self.meta.target_scale * tape.output()[0];
        y.max(0.0)
    }

    /// Central differences `(PS(x + h e_k) − PS(x − h e_k)) / 2h`.
    pub fn sensitivities(&self, x: &Vec3, ttm_months: u32, h: f64) -> Result<Vec3> {
        self.check_ttm(ttm_months)?;
        if !(h > 0.0) {
            return Err(Error::param("h", "bump must be positive"));
        }
        let mut tape = self.net.tape();
        Ok(self.sensitivities_with(&mut tape, x, ttm_months, h))
    }

    #[inline]
    pub(crate) fn sensitivities_with(&self, tape: &mut Tape, x: &Vec3, ttm_months: u32, h: f64) -> Vec3 {
        let mut out = [0.0; 3];
        for k in 0..3 {
            let mut up = *x;
            let mut dn = *x;
            up[k] += h;
            dn[k] -= h;
            out[k] = (self.price_with(tape, &up, ttm_months) - self.price_with(tape, &dn, ttm_months)) / (2.0 * h);
        }
        out
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            self.net.spec().clone(),
            self.params.clone(),
            self.meta.manifest.seed,
            serde_json::to_value(&self.meta)?,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: SurrogateMeta = serde_json::from_value(ck.header.extra.clone())?;
        if ck.header.spec.input_dim() != 4 || ck.header.spec.output_dim() != 1 {
            return Err(Error::Format("pricer checkpoint must map 4 inputs to 1 output".into()));
        }
        Self::assemble(Network::new(ck.header.spec.clone())?, ck.params.clone(), meta)
    }
}

/// Free-function form of [`SurrogateModel::price`].
pub fn surrogate_price(model: &SurrogateModel, x: &Vec3, ttm_months: u32) -> Result<f64> {
    model.price(x, ttm_months)
}

/// Free-function form of [`SurrogateModel::sensitivities`].
pub fn surrogate_sensitivities(model: &SurrogateModel, x: &Vec3, ttm_months: u32, h: f64) -> Result<Vec3> {
    model.sensitivities(x, ttm_months, h)
}
