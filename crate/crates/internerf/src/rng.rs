//! Counter-based deterministic RNG.
//!
//! Every random decision in the pipeline is keyed by a short stream of
//! integers (seed, purpose tag, step, slot, ...). Streams with equal keys
//! produce equal draws no matter which thread or in which order they are
//! consumed, so batch content and jitter patterns are independent of
//! execution order and worker count.

/// Stream purpose tags. Keeping them in one place avoids accidental
/// collisions between subsystems that share a seed.
pub mod stream {
    pub const INIT_SHARED: u64 = 1;
    pub const INIT_VERTEX: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const RAY_SAMPLES: u64 = 4;
    pub const SCENE: u64 = 5;
    pub const EVAL: u64 = 6;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A cheap splittable RNG: construct from a key, then draw sequentially.
#[derive(Clone, Debug)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    /// Derives a stream from `seed` and a key path. Order of key words matters.
    pub fn from_key(seed: u64, key: &[u64]) -> Self {
        let mut state = splitmix64(seed ^ 0x6a09_e667_f3bc_c908);
        for &word in key {
            state = splitmix64(state ^ word.wrapping_mul(GOLDEN));
        }
        CounterRng { state }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        // 53 high bits; guaranteed < 1.
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [0, 1) as f32.
    #[inline]
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is negligible for the small ranges used here.
        (self.next_u64() % n as u64) as usize
    }
}
