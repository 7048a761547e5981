//! Seeded random streams.
//!
//! Every consumer of randomness draws from a ChaCha8 generator keyed by the
//! run seed and a fixed stream id, so results depend only on `(seed, stream)`
//! and never on the order in which consumers happen to be created.
//!
//! Stream ids:
//!
//! | id            | consumer                                   |
//! |---------------|--------------------------------------------|
//! | `j`           | simulated covariate column `j` (0-based)   |
//! | `64`          | simulated noise                            |
//! | `65`          | train/test split                           |
//! | `66`          | binomial fixture covariate                 |
//! | `67`          | binomial fixture response draws            |
//! | `1024 + j`    | weight initialisation of term `j`          |
//! | `2048 + j`    | mini-batch shuffling of term `j`           |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const NOISE_STREAM: u64 = 64;
pub const SPLIT_STREAM: u64 = 65;
pub const FIXTURE_X_STREAM: u64 = 66;
pub const FIXTURE_Y_STREAM: u64 = 67;
const INIT_STREAM_BASE: u64 = 1024;
const SHUFFLE_STREAM_BASE: u64 = 2048;

pub fn stream(seed: u64, id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn init_stream(seed: u64, term_index: usize) -> StreamRng {
    stream(seed, INIT_STREAM_BASE + term_index as u64)
}

pub fn shuffle_stream(seed: u64, term_index: usize) -> StreamRng {
    stream(seed, SHUFFLE_STREAM_BASE + term_index as u64)
}
