//! Incentive mechanism for trading learning-model immersion between mobile
//! users (MUs) and metaverse service providers (MSPs).

// Negated comparisons are NaN guards.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod equilibrium;
pub mod flsim;
pub mod generator;
pub mod harness;
pub mod iom;
pub mod market;
pub mod mddr;
pub mod search;
pub mod verify;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent ChaCha stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
