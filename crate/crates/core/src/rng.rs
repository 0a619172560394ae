//! Seeded random streams. Every run derives all randomness from one seed;
//! each consumer gets its own ChaCha stream so adding draws in one module
//! never shifts another module's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

pub mod streams {
    pub const TOY_INIT: u64 = 1;
    pub const TOY_DATA: u64 = 2;
    pub const TOY_EVAL: u64 = 3;
    pub const ACTIVATIONS: u64 = 4;
    pub const NDM_INIT: u64 = 10;
    pub const NDM_REINIT: u64 = 11;
    pub const NDM_SEARCH: u64 = 12;
    pub const BASELINE: u64 = 20;
    pub const PATCHING: u64 = 21;
    pub const SUBSAMPLE: u64 = 22;
}

pub fn stream(seed: u64, id: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
