//! Keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose key is derived from
//! `(seed, scenario, role)` and whose 64-bit stream id is the replicate index,
//! so any replicate's draws can be reproduced without touching the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for; distinct roles never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    Covariates = 1,
    RandomEffect = 2,
    SamplingError = 3,
    Bootstrap = 4,
    Panel = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub scenario: u64,
    pub role: Role,
}

impl StreamKey {
    pub fn new(seed: u64, scenario: u64, role: Role) -> Self {
        StreamKey { seed, scenario, role }
    }

    /// Generator for replicate `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut state = self.seed ^ 0x6a09_e667_f3bc_c908;
        let mut key = [0u8; 32];
        let words = [self.scenario, self.role as u64, self.seed, 0x3c6e_f372_fe94_f82b];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            state ^= w;
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a hash, used to turn scenario labels into stream ids.
pub fn label_id(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
