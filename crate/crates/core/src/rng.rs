//! Deterministic, counter-based random number streams.
//!
//! A stream is identified by `(seed, stream_id)`. It is backed by ChaCha8
//! with the stream id placed in the cipher's nonce, so every stream is an
//! independent keystream and the draw sequence depends on nothing but the
//! pair. Monte Carlo stages give each path its own stream id, which makes
//! the results independent of how paths are scheduled across workers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

/// Stream-id namespaces. Paths of one experiment draw from
/// `domain | path_index`, so drivers of different roles never collide.
pub mod domain {
    /// Brownian drivers of the pricing model on the full horizon.
    pub const DIFFUSION: u64 = 1 << 56;
    /// Exponential thresholds of the default times.
    pub const DEFAULTS: u64 = 2 << 56;
    /// Randomized model parameters.
    pub const PARAMS: u64 = 3 << 56;
    /// Drivers used to push the risk factors to a risk horizon independently
    /// of the payoff drivers.
    pub const HORIZON: u64 = 4 << 56;
    /// First twin copy of a continuation.
    pub const TWIN_A: u64 = 5 << 56;
    /// Second twin copy of a continuation.
    pub const TWIN_B: u64 = 6 << 56;
    /// Inner paths of nested Monte Carlo.
    pub const NESTED: u64 = 7 << 56;
    /// Portfolio and other one-off draws.
    pub const MISC: u64 = 8 << 56;
    /// Learner initialization and mini-batch shuffles.
    pub const TRAINING: u64 = 9 << 56;
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

/// Creates the stream `(seed, stream_id)` positioned at counter 0.
pub fn make_stream(seed: u64, stream_id: u64) -> RngStream {
    let mut inner = ChaCha8Rng::seed_from_u64(seed);
    inner.set_stream(stream_id);
    RngStream {
        seed,
        stream_id,
        inner,
    }
}

impl RngStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Repositions the stream at an absolute word counter.
    pub fn seek(&mut self, word_pos: u128) {
        self.inner.set_word_pos(word_pos);
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    #[inline]
    pub fn exponential(&mut self) -> f64 {
        self.inner.sample(Exp1)
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `0..n`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.normal();
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
