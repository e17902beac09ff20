//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, purpose, round, pixel)`: the first three
//! form the ChaCha key, the pixel index selects the stream. Draws for one
//! pixel therefore never depend on how many values other pixels consumed, so
//! per-pixel generation is order-independent and parallel-safe.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Identifies what a stream is used for so unrelated draws never collide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    SceneLayout = 1,
    FlowNoise = 2,
    DepthNoise = 3,
    EmbeddingNoise = 4,
}

#[derive(Clone, Debug)]
pub struct KeyedRng {
    base: ChaCha8Rng,
}

impl KeyedRng {
    pub fn new(seed: u64, purpose: Purpose, round: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
        key[16..24].copy_from_slice(&round.to_le_bytes());
        key[24..].copy_from_slice(b"dense-se");
        Self {
            base: ChaCha8Rng::from_seed(key),
        }
    }

    /// Sequential stream 0, for draws that are not tied to a pixel.
    pub fn sequential(&self) -> ChaCha8Rng {
        self.base.clone()
    }

    /// Independent stream for one pixel.
    pub fn stream(&self, pixel: usize) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        // stream 0 is reserved for `sequential`
        rng.set_stream(pixel as u64 + 1);
        rng
    }

    /// Draws `N` standard normal values from the stream of `pixel`.
    pub fn normals<const N: usize>(&self, pixel: usize) -> [f64; N] {
        let mut rng = self.stream(pixel);
        std::array::from_fn(|_| StandardNormal.sample(&mut rng))
    }
}
