//! Latency-modeled links.
//!
//! Delays are counter-based rather than stream-based: each draw is a
//! pure function of (seed, trial, channel, index). A dropped packet or
//! an extra control message therefore never shifts the delays seen by
//! unrelated traffic — which is what lets two runs of the same trial
//! under different enforcement modes produce microsecond-identical
//! delays for the flows they share.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One direction of a link: fixed base latency plus seeded uniform
/// jitter with the given half-width. Delivered latency is always ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkModel {
    pub base_us: u64,
    pub jitter_us: u64,
}

impl LinkModel {
    pub fn new(base_us: u64, jitter_us: u64) -> LinkModel {
        LinkModel { base_us, jitter_us }
    }

    pub fn delay(&self, draws: &DrawSource, channel: &str, index: u64) -> u64 {
        if self.jitter_us == 0 {
            return self.base_us;
        }
        let span = 2 * self.jitter_us + 1;
        let offset = draws.uniform(channel, index) % span;
        (self.base_us + offset).saturating_sub(self.jitter_us)
    }
}

/// Deterministic randomness scoped to one trial.
#[derive(Debug, Clone, Copy)]
pub struct DrawSource {
    pub seed: u64,
    pub trial: u32,
}

impl DrawSource {
    pub fn new(seed: u64, trial: u32) -> DrawSource {
        DrawSource { seed, trial }
    }

    /// A uniform u64 that depends only on (seed, trial, channel, index).
    pub fn uniform(&self, channel: &str, index: u64) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&self.seed.to_le_bytes());
        eat(&self.trial.to_le_bytes());
        eat(channel.as_bytes());
        eat(&index.to_le_bytes());
        ChaCha8Rng::seed_from_u64(h).next_u64()
    }
}
