//! Reproducible random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream addressed by a
//! `(seed, stream)` pair, so the draws for path `i` never depend on how many
//! other paths are simulated or on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Vec3;

/// Independent generator for stream `stream` under `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser used to derive child seeds from a parent seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws correlated standard normal 3-vectors through a lower Cholesky factor.
#[derive(Debug, Clone, Copy)]
pub struct CorrelatedNormals {
    chol: [[f64; 3]; 3],
}

impl CorrelatedNormals {
    pub fn new(chol: [[f64; 3]; 3]) -> Self {
        Self { chol }
    }

    #[inline]
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let e0: f64 = StandardNormal.sample(rng);
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        let l = &self.chol;
        [
            l[0][0] * e0,
            l[1][0] * e0 + l[1][1] * e1,
            l[2][0] * e0 + l[2][1] * e1 + l[2][2] * e2,
        ]
    }
}
