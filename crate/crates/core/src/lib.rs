//! Deep hedging laboratory for European payer swaptions.
//!
//! The term structure follows a three-factor discrete-time arbitrage-free
//! Nelson-Siegel model (monthly steps). On top of it the crate provides
//! closed-form swap valuation, forward-measure Monte Carlo swaption pricing,
//! a small reverse-mode network kit (FCNN with Mish, RBF-based KAN), a KAN
//! swaption pricer, a self-financing hedging environment with neural and
//! rho-hedging strategies, and the evaluation metrics used to compare them.

pub mod analysis;
pub mod dtafns;
pub mod error;
pub mod hedging;
pub mod instruments;
pub mod io;
pub mod mc_pricer;
pub mod nn;
pub mod rng;
pub mod surrogate;

pub use error::{Error, Result};

/// Three-vector of term-structure factors (level, slope, curvature).
pub type Vec3 = [f64; 3];
