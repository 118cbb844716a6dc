//! Seeded random streams.
//!
//! Every randomized operation in the crate draws from a [`SeededStream`]: a
//! ChaCha8 keystream keyed by a 64-bit seed and addressed by a 64-bit stream
//! id. ChaCha is counter based, so streams derived from the same seed with
//! different ids are independent and can be handed to separate workers
//! without changing results.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream id namespaces. The high byte of a stream id selects the purpose so
/// that ids built from cell coordinates never collide across purposes.
pub mod purpose {
    pub const FIELD_ROUGHNESS: u8 = 0x01;
    pub const CARRIER_ROUGHNESS: u8 = 0x02;
    pub const CAPTURE_NOISE: u8 = 0x10;
    pub const PLAINTEXTS: u8 = 0x20;
    pub const STUDY: u8 = 0x30;
}

/// Builds a stream id from a purpose tag and a 56-bit payload.
pub fn stream_id(purpose: u8, payload: u64) -> u64 {
    ((purpose as u64) << 56) | (payload & 0x00ff_ffff_ffff_ffff)
}

#[derive(Clone, Debug)]
pub struct SeededStream {
    rng: ChaCha8Rng,
}

impl SeededStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn fill_bytes(&mut self, buf: &mut [u8]) {
        self.rng.fill_bytes(buf)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Source of additive measurement noise for trace capture.
///
/// `Silent` produces exact zeros: the zero-noise limit of a capture, where the
/// data-dependent signal is still scaled from the configured noise level.
#[derive(Clone, Debug)]
pub enum NoiseStream {
    Gaussian(SeededStream),
    Silent,
}

impl NoiseStream {
    pub fn seeded(seed: u64, stream: u64) -> Self {
        NoiseStream::Gaussian(SeededStream::new(seed, stream))
    }

    pub fn sample(&mut self, sigma: f64) -> f64 {
        match self {
            NoiseStream::Gaussian(s) => sigma * s.standard_normal(),
            NoiseStream::Silent => 0.0,
        }
    }
}

/// Splitmix64 finalizer, used to derive child seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
