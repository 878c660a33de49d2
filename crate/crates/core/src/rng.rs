//! Deterministic random streams.
//!
//! An [`RngStream`] names a ChaCha8 keystream by `(seed, stream_id)`. The seed
//! keys the cipher and the stream id selects the 64-bit nonce, so distinct ids
//! under the same seed are independent and any stream can be rebuilt anywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Fresh generator positioned at the start of the stream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream for a labelled sub-task. Children of distinct labels, and
    /// children of distinct parents, land on unrelated keys.
    pub fn derive(&self, label: u64) -> RngStream {
        let key = splitmix64(splitmix64(self.seed ^ 0x9e37_79b9_7f4a_7c15) ^ self.stream_id);
        RngStream { seed: splitmix64(key ^ splitmix64(label.wrapping_add(0x632b_e59b_d9b4_e019))), stream_id: label }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
