//! Seeded random sources.
//!
//! Every random draw in the crate comes from `xoshiro256++`, seeded through
//! SplitMix64 (`seed_from_u64`). One seed feeds several independent lanes:
//! lane `k` is the base generator advanced by `k` long jumps (2^192 steps
//! each), so the lanes never overlap in practice. Within a lane, sub-streams
//! are split off with ordinary jumps (2^128 steps).

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Identifier stored in stream files so a file names the generator that made it.
pub const GENERATOR_ID: &str = "xoshiro256pp-sm64-v1";

pub type CspRng = Xoshiro256PlusPlus;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lane {
    /// Constraint stream generation.
    Stream = 0,
    /// Initial assignment for a driver run.
    Init = 1,
    /// Move selection in the repair engine.
    Repair = 2,
}

pub fn lane_rng(seed: u64, lane: Lane) -> CspRng {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..lane as u32 {
        rng.long_jump();
    }
    rng
}

/// Sub-stream `index` of a lane.
pub fn substream_rng(seed: u64, lane: Lane, index: u32) -> CspRng {
    let mut rng = lane_rng(seed, lane);
    for _ in 0..index {
        rng.jump();
    }
    rng
}
