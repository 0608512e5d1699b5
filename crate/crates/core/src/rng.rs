//! Seeded, stream-separated generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used for synthetic dataset generation.
pub const DATA_STREAM: u64 = 0;
/// Stream used for initial model draws.
pub const INIT_STREAM: u64 = 1;
/// Stream used by constant estimation probes.
pub const PROBE_STREAM: u64 = 2;
const PE_STREAM_BASE: u64 = 1 << 32;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mini-batch sampler owned by PE `pe`.
pub fn pe_rng(seed: u64, pe: usize) -> ChaCha8Rng {
    stream_rng(seed, PE_STREAM_BASE + pe as u64)
}
