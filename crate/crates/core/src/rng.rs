//! Deterministic uniform random streams.
//!
//! Each stream is a ChaCha8 generator seeded from a 64-bit key. Streams for
//! parallel workers are derived from the master seed plus a tuple of indices
//! (slot, timestep, ...) so results never depend on scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
#[inline]
pub const fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a master seed and a key tuple into one 64-bit seed.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(master), |h, &k| mix64(h ^ mix64(k)))
}

/// A single-owner stream of uniform draws of 1 to 32 bits.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
    buf: u64,
    avail: u32,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            buf: 0,
            avail: 0,
        }
    }

    pub fn derive(master: u64, keys: &[u64]) -> Self {
        Self::new(derive_seed(master, keys))
    }

    /// Uniform draw over `[0, 2^width)`.
    #[inline]
    pub fn draw(&mut self, width: u32) -> u32 {
        debug_assert!((1..=32).contains(&width));
        if self.avail < width {
            self.buf = self.rng.next_u64();
            self.avail = 64;
        }
        let v = (self.buf & ((1u64 << width) - 1)) as u32;
        self.buf >>= width;
        self.avail -= width;
        v
    }

    #[inline]
    pub fn draw5(&mut self) -> u8 {
        self.draw(5) as u8
    }

    #[inline]
    pub fn draw10(&mut self) -> u16 {
        self.draw(10) as u16
    }

    #[inline]
    pub fn draw20(&mut self) -> u32 {
        self.draw(20)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform f64 in [0, 1) for stimulus generation.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
