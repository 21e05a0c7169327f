//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Straight-line ℚ simulation written from the model equations, independent
/// of the crate's stepper.
pub struct QSimulator {
    pub kappa: [[f64; 3]; 3],
    pub theta: [f64; 3],
    pub sigma: [f64; 3],
    pub chol: [[f64; 3]; 3],
    pub delta: f64,
}

impl QSimulator {
    pub fn new(v: &swaphedge::dtafns::ParamValues) -> Self {
        let r = v.rho;
        // Hand-rolled 3×3 Cholesky.
        let l00 = r[0][0].sqrt();
        let l10 = r[1][0] / l00;
        let l20 = r[2][0] / l00;
        let l11 = (r[1][1] - l10 * l10).sqrt();
        let l21 = (r[2][1] - l20 * l10) / l11;
        let l22 = (r[2][2] - l20 * l20 - l21 * l21).sqrt();
        Self {
            kappa: v.kappa_q,
            theta: v.theta_q,
            sigma: v.sigma,
            chol: [[l00, 0.0, 0.0], [l10, l11, 0.0], [l20, l21, l22]],
            delta: v.delta,
        }
    }

    pub fn step(&self, x: &[f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
        let e: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let mut out = [0.0; 3];
        for i in 0..3 {
            let mut z = 0.0;
            let mut pull = 0.0;
            for j in 0..3 {
                z += self.chol[i][j] * e[j];
                pull += self.kappa[i][j] * (self.theta[j] - x[j]);
            }
            out[i] = x[i] + pull + self.sigma[i] * z;
        }
        out
    }
}

/// Mean and standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Pathwise discount `exp(−Δ Σ r_j)` over `months` ℚ-steps from `x0`, plus the terminal factors.
pub fn q_discounted_paths(
    v: &swaphedge::dtafns::ParamValues,
    x0: [f64; 3],
    months: u32,
    n_paths: usize,
    seed: u64,
) -> Vec<(f64, [f64; 3])> {
    let sim = QSimulator::new(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_paths)
        .map(|_| {
            let mut x = x0;
            let mut integral = 0.0;
            for _ in 0..months {
                integral += x[0] + x[1];
                x = sim.step(&x, &mut rng);
            }
            ((-sim.delta * integral).exp(), x)
        })
        .collect()
}

/// Euclidean projection onto `{0 ≤ x ≤ cap, Σx ≤ gross}` by brute force:
/// enumerate every active set of the KKT system and keep the best feasible candidate.
pub fn brute_force_projection(e: &[f64], cap: f64, gross: f64) -> Vec<f64> {
    let m = e.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    // Each coordinate is at 0, at cap, or free; the gross constraint is active or not.
    let states = 3usize.pow(m as u32);
    for code in 0..states {
        let mut pattern = Vec::with_capacity(m);
        let mut c = code;
        for _ in 0..m {
            pattern.push(c % 3);
            c /= 3;
        }
        for gross_active in [false, true] {
            let mut x = vec![0.0; m];
            let free: Vec<usize> = (0..m).filter(|&i| pattern[i] == 2).collect();
            let fixed_sum: f64 = (0..m).filter(|&i| pattern[i] == 1).map(|_| cap).sum();
            let mu = if gross_active {
                if free.is_empty() {
                    0.0
                } else {
                    let free_sum: f64 = free.iter().map(|&i| e[i]).sum();
                    (free_sum + fixed_sum - gross) / free.len() as f64
                }
            } else {
                0.0
            };
            for i in 0..m {
                x[i] = match pattern[i] {
                    0 => 0.0,
                    1 => cap,
                    _ => e[i] - mu,
                };
            }
            let feasible = x.iter().all(|&xi| xi >= -1e-12 && xi <= cap + 1e-12)
                && x.iter().sum::<f64>() <= gross + 1e-12;
            if !feasible {
                continue;
            }
            let dist: f64 = x.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, x));
            }
        }
    }
    best.expect("origin is always feasible").1
}
