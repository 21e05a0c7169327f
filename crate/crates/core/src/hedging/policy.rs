//! Neural hedging policy and its training loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::{HedgeEnv, Observation, PathMarket, PathSet, PositionProvider};
use super::objective::{objective, objective_grad, ObjectiveKind};
use crate::dtafns::ModelParams;
use crate::nn::{AdamState, Checkpoint, EarlyStopping, EpochRecord, NetSpec, Network, PlateauScheduler, Tape};
use crate::rng::derive_seed;
use crate::surrogate::SurrogateModel;
use crate::{Error, Result, Vec3};

/// Paths per gradient chunk; fixed so reductions do not depend on the thread count.
const GRAD_CHUNK: usize = 64;

const TAG_INIT: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_VAL: u64 = 3;

/// Hidden widths of the hedging network.
pub const POLICY_WIDTHS: [usize; 4] = [8, 32, 32, 8];

/// Inputs: three factors, portfolio value, time to exercise in years.
pub const POLICY_INPUTS: usize = 5;

pub fn policy_spec(m: usize) -> NetSpec {
    NetSpec::fcnn(POLICY_INPUTS, &POLICY_WIDTHS, m)
}

/// Frozen standardisation of the factor and portfolio-value inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureNorm {
    pub x_mean: Vec3,
    pub x_std: Vec3,
    pub v_mean: f64,
    pub v_std: f64,
}

impl FeatureNorm {
    pub fn identity() -> Self {
        Self {
            x_mean: [0.0; 3],
            x_std: [1.0; 3],
            v_mean: 0.0,
            v_std: 1.0,
        }
    }

    #[inline]
    pub fn features(&self, x: &Vec3, v: f64, ttm_years: f64) -> [f64; POLICY_INPUTS] {
        [
            (x[0] - self.x_mean[0]) / self.x_std[0],
            (x[1] - self.x_mean[1]) / self.x_std[1],
            (x[2] - self.x_mean[2]) / self.x_std[2],
            (v - self.v_mean) / self.v_std,
            ttm_years,
        ]
    }

    /// Statistics over every (path, month < T) cell of `set`. The portfolio
    /// value input is calibrated on `value_proxy(x_t, months to exercise)`,
    /// the value a perfect hedge would carry.
    pub fn calibrate<F>(env: &HedgeEnv, set: &PathSet, value_proxy: F) -> Result<Self>
    where
        F: Fn(&Vec3, u32) -> f64 + Sync,
    {
        if set.n_paths == 0 {
            return Err(Error::Empty("calibration paths"));
        }
        let horizon = env.horizon();
        // Sums are taken around the origin cell to avoid cancellation.
        let x_ref = *set.sim.x0();
        let v_ref = value_proxy(&x_ref, horizon);
        let chunks: Vec<[f64; 8]> = (0..set.n_paths as u64)
            .collect::<Vec<_>>()
            .par_chunks(GRAD_CHUNK)
            .map(|idx| {
                let mut acc = [0.0; 8];
                for &i in idx {
                    let path = env.path(set, i)?;
                    for t in 0..horizon as usize {
                        let x = path.factors[t];
                        let v = value_proxy(&x, horizon - t as u32) - v_ref;
                        for k in 0..3 {
                            let d = x[k] - x_ref[k];
                            acc[k] += d;
                            acc[4 + k] += d * d;
                        }
                        acc[3] += v;
                        acc[7] += v * v;
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let mut tot = [0.0; 8];
        for c in &chunks {
            for k in 0..8 {
                tot[k] += c[k];
            }
        }
        let n = (set.n_paths * horizon as usize) as f64;
        let stat = |s: f64, ss: f64, shift: f64| {
            let mean = s / n;
            let sd = (ss / n - mean * mean).max(0.0).sqrt();
            (shift + mean, if sd > 1e-12 { sd } else { 1.0 })
        };
        let mut norm = Self::identity();
        for k in 0..3 {
            (norm.x_mean[k], norm.x_std[k]) = stat(tot[k], tot[4 + k], x_ref[k]);
        }
        (norm.v_mean, norm.v_std) = stat(tot[3], tot[7], v_ref);
        Ok(norm)
    }

    /// [`FeatureNorm::calibrate`] with the surrogate price as value proxy.
    pub fn calibrate_with_surrogate(env: &HedgeEnv, set: &PathSet, surrogate: &SurrogateModel) -> Result<Self> {
        Self::calibrate(env, set, |x, ttm| {
            let mut tape = surrogate.tape();
            surrogate.price_with(&mut tape, x, ttm)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyMeta {
    norm: FeatureNorm,
    objective: ObjectiveKind,
    a: f64,
    seed: u64,
    /// Years per month, used to express time to exercise.
    delta: f64,
}

/// Trained hedging network with its frozen input normalisation.
#[derive(Debug, Clone)]
pub struct PolicyModel {
    net: Network,
    params: Vec<f64>,
    meta: PolicyMeta,
}

impl PolicyModel {
    pub fn new(
        m: usize,
        params: Vec<f64>,
        norm: FeatureNorm,
        objective: ObjectiveKind,
        a: f64,
        seed: u64,
        delta: f64,
    ) -> Result<Self> {
        let net = Network::new(policy_spec(m))?;
        Self::assemble(
            net,
            params,
            PolicyMeta {
                norm,
                objective,
                a,
                seed,
                delta,
            },
        )
    }

    fn assemble(net: Network, params: Vec<f64>, meta: PolicyMeta) -> Result<Self> {
        if params.len() != net.n_params() {
            return Err(Error::DimensionMismatch {
                expected: net.n_params(),
                got: params.len(),
            });
        }
        Ok(Self { net, params, meta })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn norm(&self) -> &FeatureNorm {
        &self.meta.norm
    }

    pub fn objective(&self) -> ObjectiveKind {
        self.meta.objective
    }

    pub fn m(&self) -> usize {
        self.net.output_dim()
    }

    /// Raw positions for a standardised feature vector.
    pub fn eval_features(&self, features: &[f64], tape: &mut Tape) -> Vec<f64> {
        self.net.forward_unchecked(&self.params, features, tape);
        tape.output().to_vec()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            self.net.spec().clone(),
            self.params.clone(),
            self.meta.seed,
            serde_json::to_value(&self.meta)?,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: PolicyMeta = serde_json::from_value(ck.header.extra.clone())?;
        if ck.header.spec.input_dim() != POLICY_INPUTS {
            return Err(Error::Format("policy checkpoint must take 5 inputs".into()));
        }
        Self::assemble(Network::new(ck.header.spec.clone())?, ck.params.clone(), meta)
    }
}

impl PositionProvider for PolicyModel {
    type Scratch = Tape;

    fn n_instruments(&self) -> usize {
        self.m()
    }

    fn scratch(&self) -> Tape {
        self.net.tape()
    }

    fn positions(&self, obs: &Observation<'_>, tape: &mut Tape, out: &mut [f64]) {
        let f = self.meta.norm.features(&obs.x, obs.v, obs.ttm_months as f64 * self.meta.delta);
        self.net.forward_unchecked(&self.params, &f, tape);
        out.copy_from_slice(tape.output());
    }
}

/// Unconstrained rollout recording one tape per rebalance; returns `h`.
fn forward_path(net: &Network, params: &[f64], norm: &FeatureNorm, mk: &PathMarket, v0: f64, delta: f64, tapes: &mut [Tape]) -> f64 {
    let m = mk.m;
    let mut value = v0;
    for t in 0..mk.horizon as usize {
        let tape = &mut tapes[t.min(tapes.len() - 1)];
        let f = norm.features(&mk.x[t], value, (mk.horizon - t as u32) as f64 * delta);
        net.forward_unchecked(params, &f, tape);
        let phi = tape.output();
        let row = t * m..(t + 1) * m;
        let cash = value - super::env::dot(phi, &mk.entry[row.clone()]);
        value = super::env::dot(phi, &mk.next[row]) + cash * mk.growth[t];
    }
    mk.payoff - value
}

/// Backpropagates `dJ/dh` through the recorded rollout into `grad`.
fn backward_path(net: &Network, params: &[f64], norm: &FeatureNorm, mk: &PathMarket, tapes: &mut [Tape], dh: f64, grad: &mut [f64]) {
    let m = mk.m;
    let mut dv = -dh;
    let mut d_phi = vec![0.0; m];
    let mut g_in = [0.0; POLICY_INPUTS];
    for t in (0..mk.horizon as usize).rev() {
        let g = mk.growth[t];
        for j in 0..m {
            d_phi[j] = dv * (mk.next[t * m + j] - g * mk.entry[t * m + j]);
        }
        net.backward_unchecked(params, &mut tapes[t], &d_phi, grad, Some(&mut g_in));
        dv = dv * g + g_in[3] / norm.v_std;
    }
}

/// Rollout settings shared by training and validation.
#[derive(Debug, Clone, Copy)]
pub struct RolloutContext<'a> {
    pub net: &'a Network,
    pub norm: &'a FeatureNorm,
    pub v0: f64,
    pub delta: f64,
    pub kind: ObjectiveKind,
    pub a: f64,
}

impl RolloutContext<'_> {
    fn check(&self, markets: &[PathMarket]) -> Result<()> {
        if markets.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if let Some(mk) = markets.iter().find(|mk| mk.m != self.net.output_dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.net.output_dim(),
                got: mk.m,
            });
        }
        Ok(())
    }

    /// Unconstrained terminal errors of every market.
    pub fn errors(&self, params: &[f64], markets: &[PathMarket]) -> Result<Vec<f64>> {
        self.check(markets)?;
        let parts: Vec<Vec<f64>> = markets
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut tape = [self.net.tape()];
                chunk
                    .iter()
                    .map(|mk| forward_path(self.net, params, self.norm, mk, self.v0, self.delta, &mut tape))
                    .collect()
            })
            .collect();
        Ok(parts.concat())
    }

    /// Objective of the unconstrained rollouts.
    pub fn loss(&self, params: &[f64], markets: &[PathMarket]) -> Result<f64> {
        objective(&self.errors(params, markets)?, self.kind, self.a)
    }

    /// Objective and its gradient with respect to the network parameters
    /// (written into `grad`).
    pub fn loss_and_grad(&self, params: &[f64], markets: &[PathMarket], grad: &mut [f64]) -> Result<f64> {
        self.check(markets)?;
        let n = markets.len() as f64;
        // CVaR needs every error before any path's weight is known; the
        // smooth objectives backpropagate each path straight after its rollout.
        let (loss, dh) = match self.kind {
            ObjectiveKind::Cvar => {
                let (loss, dh) = objective_grad(&self.errors(params, markets)?, self.kind, self.a)?;
                (Some(loss), Some(dh))
            }
            ObjectiveKind::Mse | ObjectiveKind::Dr => (None, None),
        };
        let n_params = self.net.n_params();
        let parts: Vec<(f64, Vec<f64>)> = markets
            .par_chunks(GRAD_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut g = vec![0.0; n_params];
                let mut tapes: Vec<Tape> = Vec::new();
                let mut sum = 0.0;
                for (i, mk) in chunk.iter().enumerate() {
                    let weight = dh.as_ref().map(|d| d[c * GRAD_CHUNK + i]);
                    if weight == Some(0.0) {
                        continue;
                    }
                    while tapes.len() < mk.horizon as usize {
                        tapes.push(self.net.tape());
                    }
                    let h = forward_path(self.net, params, self.norm, mk, self.v0, self.delta, &mut tapes);
                    let d = match weight {
                        Some(w) => w,
                        None => {
                            let e = if self.kind == ObjectiveKind::Dr { h.max(0.0) } else { h };
                            sum += e * e;
                            2.0 * e / n
                        }
                    };
                    if d != 0.0 {
                        backward_path(self.net, params, self.norm, mk, &mut tapes, d, &mut g);
                    }
                }
                (sum, g)
            })
            .collect();
        grad.fill(0.0);
        let mut total = 0.0;
        for (sum, g) in &parts {
            total += sum;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        let loss = loss.unwrap_or(total / n);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("{} objective", self.kind.label())));
        }
        Ok(loss)
    }
}

/// Deep-hedging training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HedgeTrainConfig {
    /// Paths per epoch; an epoch is `⌈n_paths / batch⌉` fresh batches.
    pub n_paths: usize,
    pub batch: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Early-stopping patience in epochs.
    pub patience: usize,
    /// Fixed validation paths.
    pub n_val: usize,
    /// Paths used to freeze the input normalisation.
    pub calib_paths: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_threshold: f64,
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for HedgeTrainConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            batch: 2048,
            lr: 5e-3,
            max_epochs: 800,
            patience: 200,
            n_val: 10_000,
            calib_paths: 100_000,
            plateau_factor: 0.5,
            plateau_patience: 25,
            plateau_threshold: 1e-6,
            min_lr: 1e-5,
            seed: 0,
        }
    }
}

impl HedgeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.batch == 0 || self.max_epochs == 0 || self.n_val == 0 || self.calib_paths == 0 {
            return Err(Error::param("train", "path counts, batch and max_epochs must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", "must be positive"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return Err(Error::param("plateau_factor", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.n_paths.div_ceil(self.batch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeTrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains a policy by stochastic gradient descent on fresh physical batches.
///
/// Rollouts are unconstrained during training; the returned policy is the
/// one with the best validation objective.
pub fn train_hedger(
    env: &HedgeEnv,
    sim: &ModelParams,
    norm: FeatureNorm,
    kind: ObjectiveKind,
    a: f64,
    cfg: &HedgeTrainConfig,
) -> Result<(PolicyModel, HedgeTrainReport)> {
    cfg.validate()?;
    if kind == ObjectiveKind::Cvar {
        objective(&vec![0.0; cfg.batch.min(cfg.n_val)], kind, a)?;
    }
    let m = env.n_instruments();
    let net = Network::new(policy_spec(m))?;
    let mut params = net.init_params(derive_seed(cfg.seed, TAG_INIT));
    let ctx = RolloutContext {
        net: &net,
        norm: &norm,
        v0: env.v0(),
        delta: env.pricing().delta(),
        kind,
        a,
    };
    let val = env.markets(
        &PathSet {
            sim: sim.clone(),
            n_paths: cfg.n_val,
            seed: derive_seed(cfg.seed, TAG_VAL),
            first_index: 0,
        },
        false,
    )?;
    let train_seed = derive_seed(cfg.seed, TAG_TRAIN);
    let iters = cfg.iterations_per_epoch();
    let mut adam = AdamState::new(net.n_params(), cfg.lr);
    let mut plateau = PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_threshold, cfg.min_lr);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut grad = vec![0.0; net.n_params()];
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let mut train_loss = 0.0;
        for it in 0..iters {
            let batch = PathSet {
                sim: sim.clone(),
                n_paths: cfg.batch,
                seed: train_seed,
                first_index: ((epoch * iters + it) * cfg.batch) as u64,
            };
            let markets = env.markets(&batch, false)?;
            train_loss += ctx.loss_and_grad(&params, &markets, &mut grad)?;
            adam.step(&mut params, &grad)?;
        }
        train_loss /= iters as f64;
        let val_loss = ctx.loss(&params, &val)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite hedging loss at epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: adam.lr,
        });
        if stopper.observe(epoch, val_loss) {
            best.copy_from_slice(&params);
        }
        if stopper.should_stop() {
            break;
        }
        adam.lr = plateau.observe(val_loss, adam.lr);
    }
    let report = HedgeTrainReport {
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        history,
    };
    let policy = PolicyModel::new(m, best, norm, kind, a, cfg.seed, env.pricing().delta())?;
    Ok((policy, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtafns::ParamValues;
    use crate::hedging::env::portfolio_rollout;
    use crate::hedging::Caps;
    use crate::instruments::{HedgeInstrumentSpec, SwapSpec};

    fn short_env(p: &ModelParams, horizon: u32) -> HedgeEnv {
        let spec = SwapSpec::new(horizon, horizon + 12, 0.03, 1.0).unwrap();
        HedgeEnv::new(
            p.clone(),
            spec,
            vec![
                HedgeInstrumentSpec::UnderlyingFixedDates { underlying: spec },
                HedgeInstrumentSpec::rolling(3, 12),
            ],
            0.01,
            Caps::default(),
        )
        .unwrap()
    }

    #[test]
    fn mse_gradient_through_two_step_rollout() {
        let p = ModelParams::published();
        let env = short_env(&p, 2);
        let markets = env.markets(&PathSet::new(p.clone(), 16, 4), false).unwrap();
        let net = Network::new(NetSpec::fcnn(5, &[4, 3], 2)).unwrap();
        let params: Vec<f64> = net.init_params(7).iter().map(|w| w * 3.0).collect();
        let norm = FeatureNorm {
            x_mean: [-0.03, 0.04, 0.07],
            x_std: [0.003, 0.005, 0.007],
            v_mean: 0.01,
            v_std: 0.002,
        };
        let ctx = RolloutContext {
            net: &net,
            norm: &norm,
            v0: 0.01,
            delta: p.delta(),
            kind: ObjectiveKind::Mse,
            a: 0.99,
        };
        let mut grad = vec![0.0; net.n_params()];
        ctx.loss_and_grad(&params, &markets, &mut grad).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let h = 1e-6 * params[i].abs().max(1e-2);
            let mut up = params.clone();
            let mut dn = params.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (ctx.loss(&up, &markets).unwrap() - ctx.loss(&dn, &markets).unwrap()) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-10);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn training_rollout_matches_environment() {
        let p = ModelParams::published();
        let env = short_env(&p, 5);
        let set = PathSet::new(p.clone(), 8, 1);
        let markets = env.markets(&set, false).unwrap();
        let net = Network::new(policy_spec(2)).unwrap();
        let params = net.init_params(3);
        let norm = FeatureNorm::identity();
        let policy = PolicyModel::new(2, params.clone(), norm, ObjectiveKind::Mse, 0.99, 3, p.delta()).unwrap();
        let ctx = RolloutContext {
            net: &net,
            norm: &norm,
            v0: env.v0(),
            delta: p.delta(),
            kind: ObjectiveKind::Mse,
            a: 0.99,
        };
        let h = ctx.errors(&params, &markets).unwrap();
        let mut tape = policy.scratch();
        for (mk, hi) in markets.iter().zip(&h) {
            let rec = portfolio_rollout(mk, env.v0(), &policy, &mut tape, None).unwrap();
            assert!((rec.h - hi).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_market_trains_to_near_zero_loss() {
        let mut v = ParamValues::published();
        v.sigma = [1e-9; 3];
        let p = ModelParams::new(v).unwrap();
        let env = short_env(&p, 6);
        let norm = FeatureNorm::calibrate(&env, &PathSet::new(p.clone(), 64, 9), |_, _| 0.01).unwrap();
        let cfg = HedgeTrainConfig {
            n_paths: 256,
            batch: 128,
            lr: 5e-3,
            max_epochs: 150,
            patience: 150,
            n_val: 64,
            calib_paths: 64,
            seed: 5,
            ..Default::default()
        };
        let (_, report) = train_hedger(&env, &p, norm, ObjectiveKind::Mse, 0.99, &cfg).unwrap();
        let first = report.history[0].val_loss;
        assert!(report.best_val_loss < 1e-8, "best {} (first {first})", report.best_val_loss);
        assert!(report.best_val_loss < 1e-3 * first);
    }

    #[test]
    fn training_is_deterministic() {
        let p = ModelParams::published();
        let env = short_env(&p, 4);
        let cfg = HedgeTrainConfig {
            n_paths: 200,
            batch: 100,
            max_epochs: 3,
            n_val: 100,
            calib_paths: 50,
            seed: 11,
            ..Default::default()
        };
        let run = || train_hedger(&env, &p, FeatureNorm::identity(), ObjectiveKind::Cvar, 0.95, &cfg).unwrap();
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(ra, rb);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ModelParams::published();
        let norm = FeatureNorm {
            x_mean: [1.0, 2.0, 3.0],
            x_std: [0.1, 0.2, 0.3],
            v_mean: 0.04,
            v_std: 0.01,
        };
        let params = Network::new(policy_spec(3)).unwrap().init_params(1);
        let policy = PolicyModel::new(3, params, norm, ObjectiveKind::Dr, 0.99, 8, p.delta()).unwrap();
        let bytes = policy.to_checkpoint().unwrap().to_bytes().unwrap();
        let back = PolicyModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.params(), policy.params());
        assert_eq!(back.norm(), policy.norm());
        assert_eq!(back.objective(), ObjectiveKind::Dr);
        assert_eq!(back.to_checkpoint().unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn cvar_training_rejects_small_batches() {
        let p = ModelParams::published();
        let env = short_env(&p, 2);
        let cfg = HedgeTrainConfig {
            n_paths: 50,
            batch: 50,
            n_val: 50,
            ..Default::default()
        };
        assert!(train_hedger(&env, &p, FeatureNorm::identity(), ObjectiveKind::Cvar, 0.99, &cfg).is_err());
    }
}
