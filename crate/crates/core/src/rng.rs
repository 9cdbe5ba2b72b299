//! Seed fan-out. One master seed feeds independent named streams, so changing
//! how much randomness one consumer draws never shifts another consumer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named consumers of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    DisturbanceNoise,
    /// Per-iteration training seed of a campaign.
    Training,
    WeightInit,
    BatchShuffle,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::DisturbanceNoise => 0x6e6f_6973_6500_0001,
            Stream::Training => 0x7472_6169_6e00_0004,
            Stream::WeightInit => 0x696e_6974_0000_0002,
            Stream::BatchShuffle => 0x7368_7566_0000_0003,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for `stream` at the given counter path (e.g. `[iteration, restart]`).
pub fn derive_seed(master: u64, stream: Stream, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master ^ stream.tag()), |acc, &c| {
            splitmix64(acc ^ splitmix64(c))
        })
}

pub fn stream_rng(master: u64, stream: Stream, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, path))
}
