//! Deterministic random streams.
//!
//! Every stochastic consumer (weight init, dropout, stochastic depth, data
//! shuffling, stub embeddings) draws from its own named ChaCha8 stream derived
//! from one run seed. Streams are independent counters, so turning one
//! consumer off cannot shift the draws any other consumer sees.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit FNV-1a over a byte string. Used to turn stream names into
/// stream ids; must never change or every seeded artifact changes with it.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 step, used to expand the run seed into ChaCha key material.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Factory for named random streams, all derived from one seed.
#[derive(Debug, Clone, Copy)]
pub struct RngFactory {
    seed: u64,
}

impl RngFactory {
    pub fn new(seed: u64) -> Self {
        RngFactory { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream named `name`, counter position 0.
    pub fn stream(&self, name: &str) -> StreamRng {
        self.substream(name, 0)
    }

    /// Independent sub-stream of `name`, e.g. one per epoch. Distinct
    /// `(name, index)` pairs yield unrelated streams.
    pub fn substream(&self, name: &str, index: u64) -> StreamRng {
        let mut key = [0u8; 32];
        let mut state = self.seed;
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        let stream_id = fnv1a64(name.as_bytes()) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        rng.set_stream(stream_id);
        StreamRng { inner: rng }
    }
}

/// A single named stream. Thin wrapper so consumers depend on this module,
/// not on the cipher choice.
#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    /// Uniform draw in [0, 1).
    pub fn uniform01_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

/// Hash a term into a sub-stream index (for per-term deterministic draws).
pub fn term_stream_index(term: &str) -> u64 {
    fnv1a64(term.as_bytes())
}
