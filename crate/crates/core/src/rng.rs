//! Deterministic random streams.
//!
//! Every consumer derives its generator from `(seed, stream)`, so results do not
//! depend on thread scheduling or on how many workers share the load.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream used to draw the scenario itself.
pub const SCENARIO_STREAM: u64 = 0;
/// Stream used for the large-scale tracks of a single realization.
pub const TRACK_STREAM: u64 = 1;
/// Monte-Carlo run `i` uses stream `ENSEMBLE_STREAM_BASE + i`.
pub const ENSEMBLE_STREAM_BASE: u64 = 1 << 32;

pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
