//! Fully connected (Mish) and Gaussian-RBF KAN networks over a flat parameter vector,
//! with a reusable tape for manual reverse-mode differentiation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mish::mish_with_grad;
use crate::rng::substream;
use crate::{Error, Result};

/// Network architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetSpec {
    /// Affine layers with Mish on every hidden layer and a linear output.
    Fcnn {
        input_dim: usize,
        widths: Vec<usize>,
        output_dim: usize,
    },
    /// Stacked KAN layers; each output is a sum of Gaussian bumps of every
    /// input plus a linear skip term.
    Kan {
        input_dim: usize,
        widths: Vec<usize>,
        output_dim: usize,
        n_centers: usize,
        center_range: [f64; 2],
    },
}

impl NetSpec {
    pub fn fcnn(input_dim: usize, widths: &[usize], output_dim: usize) -> Self {
        NetSpec::Fcnn {
            input_dim,
            widths: widths.to_vec(),
            output_dim,
        }
    }

    /// KAN with 8 centers on [−2, 2].
    pub fn kan(input_dim: usize, widths: &[usize], output_dim: usize) -> Self {
        NetSpec::Kan {
            input_dim,
            widths: widths.to_vec(),
            output_dim,
            n_centers: 8,
            center_range: [-2.0, 2.0],
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            NetSpec::Fcnn { input_dim, .. } | NetSpec::Kan { input_dim, .. } => *input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            NetSpec::Fcnn { output_dim, .. } | NetSpec::Kan { output_dim, .. } => *output_dim,
        }
    }

    fn dims(&self) -> Vec<usize> {
        let (i, w, o) = match self {
            NetSpec::Fcnn {
                input_dim,
                widths,
                output_dim,
            }
            | NetSpec::Kan {
                input_dim,
                widths,
                output_dim,
                ..
            } => (*input_dim, widths, *output_dim),
        };
        std::iter::once(i).chain(w.iter().copied()).chain(std::iter::once(o)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::param("net_spec", "all layer sizes must be positive"));
        }
        if let NetSpec::Kan {
            n_centers,
            center_range,
            ..
        } = self
        {
            if *n_centers < 2 {
                return Err(Error::param("n_centers", "need at least two centers"));
            }
            if !(center_range[0] < center_range[1]) {
                return Err(Error::param("center_range", "must be increasing"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Dense { activate: bool },
    Kan,
}

#[derive(Debug, Clone)]
struct Layer {
    kind: Kind,
    n_in: usize,
    n_out: usize,
    offset: usize,
}

impl Layer {
    fn n_params(&self, n_centers: usize) -> usize {
        match self.kind {
            Kind::Dense { .. } => self.n_out * self.n_in + self.n_out,
            Kind::Kan => self.n_out * self.n_in * n_centers + self.n_out * self.n_in + self.n_out,
        }
    }
}

/// A compiled network: layer layout over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetSpec,
    layers: Vec<Layer>,
    n_params: usize,
    centers: Vec<f64>,
    inv_width: f64,
}

/// Per-evaluation scratch memory; reuse it across calls to avoid allocation.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `acts[l]` is the input of layer `l`; the last entry is the network output.
    acts: Vec<Vec<f64>>,
    /// Mish derivatives (dense) or RBF basis values (KAN) per layer.
    aux: Vec<Vec<f64>>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape has an output buffer")
    }
}

impl Network {
    pub fn new(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let dims = spec.dims();
        let (is_kan, n_centers, centers, inv_width) = match &spec {
            NetSpec::Fcnn { .. } => (false, 0, Vec::new(), 0.0),
            NetSpec::Kan {
                n_centers,
                center_range,
                ..
            } => {
                let h = (center_range[1] - center_range[0]) / (*n_centers as f64 - 1.0);
                let c = (0..*n_centers).map(|k| center_range[0] + k as f64 * h).collect();
                (true, *n_centers, c, 1.0 / h)
            }
        };
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut offset = 0;
        for l in 0..dims.len() - 1 {
            let kind = if is_kan {
                Kind::Kan
            } else {
                Kind::Dense {
                    activate: l + 2 < dims.len(),
                }
            };
            let layer = Layer {
                kind,
                n_in: dims[l],
                n_out: dims[l + 1],
                offset,
            };
            offset += layer.n_params(n_centers);
            layers.push(layer);
        }
        Ok(Self {
            spec,
            layers,
            n_params: offset,
            centers,
            inv_width,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn n_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn tape(&self) -> Tape {
        let k = self.n_centers();
        let mut acts: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.n_in]).collect();
        acts.push(vec![0.0; self.output_dim()]);
        let aux = self
            .layers
            .iter()
            .map(|l| match l.kind {
                Kind::Dense { .. } => vec![0.0; l.n_out],
                Kind::Kan => vec![0.0; l.n_in * k],
            })
            .collect();
        let widest = self.layers.iter().map(|l| l.n_in.max(l.n_out)).max().unwrap_or(1);
        Tape {
            acts,
            aux,
            grad_a: vec![0.0; widest],
            grad_b: vec![0.0; widest],
        }
    }

    /// Kaiming-uniform weights `U(±√(6/fan_in))`, zero biases.
    ///
    /// For KAN layers the RBF mixing weights use `fan_in = n_in·n_centers`
    /// and the skip weights `fan_in = n_in`.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, 0);
        let k = self.n_centers();
        let mut params = vec![0.0; self.n_params];
        for layer in &self.layers {
            let mut fill = |start: usize, len: usize, fan_in: usize| {
                let bound = (6.0 / fan_in as f64).sqrt();
                for w in &mut params[start..start + len] {
                    *w = rng.random_range(-bound..bound);
                }
            };
            let (n_in, n_out, o) = (layer.n_in, layer.n_out, layer.offset);
            match layer.kind {
                Kind::Dense { .. } => fill(o, n_out * n_in, n_in),
                Kind::Kan => {
                    fill(o, n_out * n_in * k, n_in * k);
                    fill(o + n_out * n_in * k, n_out * n_in, n_in);
                }
            }
        }
        params
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::DimensionMismatch {
                expected: self.n_params,
                got: params.len(),
            });
        }
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Evaluates the network, recording what the backward pass needs.
    pub fn forward<'t>(&self, params: &[f64], input: &[f64], tape: &'t mut Tape) -> Result<&'t [f64]> {
        self.check(params, input)?;
        self.forward_unchecked(params, input, tape);
        Ok(tape.output())
    }

    pub(crate) fn forward_unchecked(&self, params: &[f64], input: &[f64], tape: &mut Tape) {
        tape.acts[0].copy_from_slice(input);
        let k = self.n_centers();
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = tape.acts.split_at_mut(l + 1);
            let a = &head[l];
            let out = &mut tail[0];
            let aux = &mut tape.aux[l];
            let (n_in, n_out, o) = (layer.n_in, layer.n_out, layer.offset);
            match layer.kind {
                Kind::Dense { activate } => {
                    let w = &params[o..o + n_out * n_in];
                    let b = &params[o + n_out * n_in..o + n_out * n_in + n_out];
                    for j in 0..n_out {
                        let row = &w[j * n_in..(j + 1) * n_in];
                        let z = b[j] + dot(row, a);
                        if activate {
                            let (m, d) = mish_with_grad(z);
                            out[j] = m;
                            aux[j] = d;
                        } else {
                            out[j] = z;
                        }
                    }
                }
                Kind::Kan => {
                    for i in 0..n_in {
                        for (c, basis) in self.centers.iter().zip(&mut aux[i * k..(i + 1) * k]) {
                            let d = (a[i] - c) * self.inv_width;
                            *basis = (-d * d).exp();
                        }
                    }
                    let mix_len = n_out * n_in * k;
                    let mix = &params[o..o + mix_len];
                    let skip = &params[o + mix_len..o + mix_len + n_out * n_in];
                    let bias = &params[o + mix_len + n_out * n_in..o + mix_len + n_out * n_in + n_out];
                    for j in 0..n_out {
                        out[j] = bias[j] + dot(&mix[j * n_in * k..(j + 1) * n_in * k], aux) + dot(&skip[j * n_in..(j + 1) * n_in], a);
                    }
                }
            }
        }
    }

    /// Accumulates `d_out`-weighted gradients into `grad_params` (and writes
    /// input gradients into `grad_input` if given). Requires a tape filled by
    /// [`Network::forward`] with the same parameters.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &mut Tape,
        d_out: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) -> Result<()> {
        if d_out.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: d_out.len(),
            });
        }
        if grad_params.len() != self.n_params || params.len() != self.n_params {
            return Err(Error::DimensionMismatch {
                expected: self.n_params,
                got: grad_params.len().min(params.len()),
            });
        }
        self.backward_unchecked(params, tape, d_out, grad_params, grad_input);
        Ok(())
    }

    pub(crate) fn backward_unchecked(
        &self,
        params: &[f64],
        tape: &mut Tape,
        d_out: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) {
        let k = self.n_centers();
        let Tape {
            acts,
            aux,
            grad_a,
            grad_b,
        } = tape;
        grad_a[..d_out.len()].copy_from_slice(d_out);
        let (mut g_out, mut g_in) = (grad_a, grad_b);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a = &acts[l];
            let (n_in, n_out, o) = (layer.n_in, layer.n_out, layer.offset);
            let g = &mut g_out[..n_out];
            let gi = &mut g_in[..n_in];
            gi.fill(0.0);
            match layer.kind {
                Kind::Dense { activate } => {
                    if activate {
                        for (gj, d) in g.iter_mut().zip(&aux[l]) {
                            *gj *= d;
                        }
                    }
                    let w = &params[o..o + n_out * n_in];
                    let (gw, gb) = grad_params[o..o + n_out * n_in + n_out].split_at_mut(n_out * n_in);
                    for j in 0..n_out {
                        let gj = g[j];
                        gb[j] += gj;
                        let row = &w[j * n_in..(j + 1) * n_in];
                        let grow = &mut gw[j * n_in..(j + 1) * n_in];
                        for i in 0..n_in {
                            grow[i] += gj * a[i];
                            gi[i] += gj * row[i];
                        }
                    }
                }
                Kind::Kan => {
                    let basis = &aux[l];
                    let mix_len = n_out * n_in * k;
                    let mix = &params[o..o + mix_len];
                    let skip = &params[o + mix_len..o + mix_len + n_out * n_in];
                    let grads = &mut grad_params[o..o + mix_len + n_out * n_in + n_out];
                    let (g_mix, rest) = grads.split_at_mut(mix_len);
                    let (g_skip, g_bias) = rest.split_at_mut(n_out * n_in);
                    // d basis / d u for input i and center k: −2 (u − c) / h² · basis.
                    for i in 0..n_in {
                        let u = a[i];
                        let b_i = &basis[i * k..(i + 1) * k];
                        let mut acc = 0.0;
                        for j in 0..n_out {
                            let gj = g[j];
                            let wrow = &mix[(j * n_in + i) * k..(j * n_in + i + 1) * k];
                            let grow = &mut g_mix[(j * n_in + i) * k..(j * n_in + i + 1) * k];
                            let mut dj = 0.0;
                            for c in 0..k {
                                grow[c] += gj * b_i[c];
                                let slope = -2.0 * (u - self.centers[c]) * self.inv_width * self.inv_width * b_i[c];
                                dj += wrow[c] * slope;
                            }
                            g_skip[j * n_in + i] += gj * u;
                            acc += gj * (skip[j * n_in + i] + dj);
                        }
                        gi[i] = acc;
                    }
                    for j in 0..n_out {
                        g_bias[j] += g[j];
                    }
                }
            }
            std::mem::swap(&mut g_out, &mut g_in);
        }
        if let Some(dst) = grad_input {
            dst.copy_from_slice(&g_out[..self.input_dim()]);
        }
    }

    /// Convenience evaluation without keeping the tape.
    pub fn eval(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        let mut tape = self.tape();
        Ok(self.forward(params, input, &mut tape)?.to_vec())
    }
}

/// Four independent accumulators so the loop vectorises.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Kaiming-uniform parameters for `spec`.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<Vec<f64>> {
    Ok(Network::new(spec.clone())?.init_params(seed))
}

/// One-shot forward pass returning the output and its tape.
pub fn forward(spec: &NetSpec, params: &[f64], input: &[f64]) -> Result<(Vec<f64>, Tape)> {
    let net = Network::new(spec.clone())?;
    let mut tape = net.tape();
    let out = net.forward(params, input, &mut tape)?.to_vec();
    Ok((out, tape))
}
