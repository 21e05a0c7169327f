//! Mini-batch supervised training with validation-based early stopping.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::Loss;
use super::network::{NetSpec, Network};
use super::optim::{AdamState, EarlyStopping, PlateauScheduler};
use crate::rng::{derive_seed, substream};
use crate::{Error, Result};

/// Rows per gradient chunk; fixed so reductions do not depend on the thread count.
const GRAD_CHUNK: usize = 64;

/// Per-feature affine standardisation `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits on row-major data with `dim` columns; columns constant up to rounding get unit scale.
    pub fn fit(data: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::Empty("standardizer data"));
        }
        let n = (data.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .zip(&mean)
            .map(|(v, m)| {
                let s = (v / n).sqrt();
                if s > 1e-12 * m.abs().max(1e-300) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.mean.len() {
            out[i] = (x[i] - self.mean[i]) / self.std[i];
        }
    }

    #[inline]
    pub fn invert(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..self.mean.len() {
            out[i] = z[i] * self.std[i] + self.mean[i];
        }
    }

    pub fn apply_rows(&self, data: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; data.len()];
        for (src, dst) in data.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.apply(src, dst);
        }
        out
    }
}

/// Row-major regression data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, input_dim: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::param("dataset", "dimensions must be positive"));
        }
        if inputs.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if inputs.len() % input_dim != 0 || targets.len() != inputs.len() / input_dim * output_dim {
            return Err(Error::DimensionMismatch {
                expected: inputs.len() / input_dim * output_dim,
                got: targets.len(),
            });
        }
        Ok(Self {
            inputs,
            targets,
            input_dim,
            output_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.output_dim..(i + 1) * self.output_dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: Loss,
    pub lr: f64,
    pub max_epochs: usize,
    pub batch: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_threshold: f64,
    pub min_lr: f64,
    /// Early-stopping patience in epochs.
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Pricer defaults: Huber loss, lr 1e−3, up to 5000 epochs.
    pub fn pricer(seed: u64) -> Self {
        Self {
            loss: Loss::huber(),
            lr: 1e-3,
            max_epochs: 5000,
            batch: 256,
            plateau_factor: 0.5,
            plateau_patience: 25,
            plateau_threshold: 1e-6,
            min_lr: 1e-5,
            patience: 200,
            val_fraction: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 || self.max_epochs == 0 {
            return Err(Error::param("train", "lr, batch and max_epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::param("val_fraction", "must lie in [0, 1)"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return Err(Error::param("plateau_factor", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub params: Vec<f64>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Seeded train/validation split. An empty validation share validates on the training rows.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(derive_seed(seed, 1), 0));
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    if val.is_empty() {
        (train.clone(), train)
    } else {
        (train, val)
    }
}

/// Mean loss of `params` over the given rows.
pub fn mean_loss(net: &Network, params: &[f64], data: &Dataset, rows: &[usize], loss: Loss) -> f64 {
    let partial: Vec<f64> = rows
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut tape = net.tape();
            let mut acc = 0.0;
            for &i in chunk {
                net.forward_unchecked(params, data.input(i), &mut tape);
                for (o, t) in tape.output().iter().zip(data.target(i)) {
                    acc += loss.value(o - t);
                }
            }
            acc
        })
        .collect();
    partial.iter().sum::<f64>() / (rows.len() * data.output_dim) as f64
}

/// Trains from Kaiming initialisation.
pub fn train_supervised(spec: &NetSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let net = Network::new(spec.clone())?;
    let init = net.init_params(derive_seed(cfg.seed, 2));
    train_from(&net, init, data, cfg)
}

/// Trains starting from `params`.
pub fn train_from(net: &Network, mut params: Vec<f64>, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if data.input_dim != net.input_dim() || data.output_dim != net.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: data.input_dim,
        });
    }
    if params.len() != net.n_params() {
        return Err(Error::DimensionMismatch {
            expected: net.n_params(),
            got: params.len(),
        });
    }
    let (mut train_idx, val_idx) = split_indices(data.len(), cfg.val_fraction, cfg.seed);
    let train_sorted = {
        let mut t = train_idx.clone();
        t.sort_unstable();
        t
    };
    let mut adam = AdamState::new(net.n_params(), cfg.lr);
    let mut plateau = PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_threshold, cfg.min_lr);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut history = Vec::new();
    let mut grad = vec![0.0; net.n_params()];
    let shuffle_seed = derive_seed(cfg.seed, 3);
    let scale = 1.0 / data.output_dim as f64;

    for epoch in 0..cfg.max_epochs {
        train_idx.shuffle(&mut substream(shuffle_seed, epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(cfg.batch) {
            let parts: Vec<(f64, Vec<f64>)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut tape = net.tape();
                    let mut g = vec![0.0; net.n_params()];
                    let mut d_out = vec![0.0; net.output_dim()];
                    let mut acc = 0.0;
                    for &i in chunk {
                        net.forward_unchecked(&params, data.input(i), &mut tape);
                        for ((d, o), t) in d_out.iter_mut().zip(tape.output()).zip(data.target(i)) {
                            let (l, dl) = cfg.loss.value_grad(o - t);
                            acc += l;
                            *d = dl * scale;
                        }
                        net.backward_unchecked(&params, &mut tape, &d_out, &mut g, None);
                    }
                    (acc, g)
                })
                .collect();
            grad.fill(0.0);
            let inv = 1.0 / batch.len() as f64;
            for (l, g) in &parts {
                epoch_loss += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b * inv;
                }
            }
            adam.step(&mut params, &grad)?;
        }
        let train_loss = epoch_loss / (train_sorted.len() * data.output_dim) as f64;
        let val_loss = mean_loss(net, &params, data, &val_idx, cfg.loss);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}")));
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
    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        train_indices: train_sorted,
        val_indices: val_idx,
    })
}
