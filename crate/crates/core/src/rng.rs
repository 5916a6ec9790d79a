//! Seeded random streams.
//!
//! Every random draw in a run comes from a stream derived from the run seed and
//! a fixed label path, so results never depend on call interleaving between
//! unrelated consumers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `seed` under the label path `labels`.
pub fn stream(seed: u64, labels: &[u64]) -> Rng {
    let mut state = seed;
    for &label in labels {
        state = splitmix(&mut state) ^ label.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    Rng::from_seed(key)
}

/// Labels for the independent consumers inside a training run.
pub mod label {
    pub const INIT: u64 = 1;
    pub const ROLLOUT: u64 = 2;
    pub const REPLAY: u64 = 3;
    pub const RELABEL: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const ROLLOUT_CMD: u64 = 6;
}
