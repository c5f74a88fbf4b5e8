//! Seeded RNG helpers. Every stochastic choice in the workspace flows through
//! a `ChaCha8Rng` keyed by (seed, stream) so runs are reproducible bit for bit
//! across platforms.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed stream ids so independent consumers of one master seed never collide.
pub mod streams {
    pub const CAE_WHOLE: u64 = 1;
    pub const CAE_TRIMMED: u64 = 2;
    pub const MTRNN_INIT: u64 = 3;
    pub const SIM_BASE: u64 = 100;
    pub const ROLLOUT_BASE: u64 = 10_000;
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
pub fn fan_in_uniform(rng: &mut ChaCha8Rng, fan_in: usize) -> f64 {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    rng.gen_range(-bound..bound)
}
