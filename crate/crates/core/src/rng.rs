//! Seedable, splittable random number generation.
//!
//! Every stochastic operation takes a [`SimRng`] explicitly. Independent
//! sub-streams are derived from a master seed by a purpose label and an
//! index, so a Monte Carlo run is reproducible regardless of how trials are
//! scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose labels for derived sub-streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Channel,
    Symbols,
    Noise,
    Other(u64),
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Channel => 0x6368_616e_6e65_6c00,
            Stream::Symbols => 0x7379_6d62_6f6c_7300,
            Stream::Noise => 0x6e6f_6973_6500_0000,
            Stream::Other(x) => x.rotate_left(17) ^ 0x6f74_6865_7200_0000,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct SimRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent generator for `(stream, index)`.
    ///
    /// Depends only on the seed this generator was created with, not on how
    /// many values have been drawn from it.
    pub fn substream(&self, stream: Stream, index: u64) -> SimRng {
        let child = splitmix64(splitmix64(self.seed ^ stream.tag()) ^ splitmix64(index));
        SimRng::new(child)
    }
}

impl RngCore for SimRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
