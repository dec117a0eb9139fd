//! Reproducible random streams.
//!
//! Every Monte Carlo trial draws from its own ChaCha8 stream keyed by
//! `(seed, stream_id)`, so results do not depend on how trials are scheduled
//! across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::math::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Derives a stream for trial `index` of this stream's experiment. The
    /// parent stream id is folded into the high bits so sibling experiments
    /// sharing a seed do not collide.
    pub fn substream(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: self.stream_id.rotate_left(32) ^ index.wrapping_add(1),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// One draw of CN(0, 1): real and imaginary parts each N(0, 1/2).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<C64> {
    (0..n).map(|_| complex_normal(rng)).collect()
}
