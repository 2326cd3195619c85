//! Counter-addressed random streams.
//!
//! Every random draw in a run comes from a substream keyed by
//! `(seed, iteration, role, row)`. The substream is a ChaCha8 generator whose
//! 256-bit key is the concatenation of those four words, so draws depend only
//! on their address and never on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    Init = 1,
    Context = 2,
    Noise = 3,
    Reference = 4,
    Check = 5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn substream(&self, iteration: u64, role: Role, row: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&iteration.to_le_bytes());
        key[16..24].copy_from_slice(&(role as u64).to_le_bytes());
        key[24..32].copy_from_slice(&row.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}
