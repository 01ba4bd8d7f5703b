//! Shared fixtures for the benchmarks.

use props_core::audit::ReadPurpose;
use props_core::mechanisms::BinaryLabel;
use props_core::{generate_world, seeded_rng, OracleGate, World, WorldParams};

/// Default-shaped world with `n` samples.
pub fn world(n: usize, seed: u64) -> World {
    let params = WorldParams {
        n,
        ..WorldParams::default()
    };
    generate_world(&params, &mut seeded_rng(seed, 0)).expect("valid world")
}

pub fn true_labels(world: &World) -> Vec<BinaryLabel> {
    OracleGate::new(&world.samples).labels(ReadPurpose::Evaluation)
}
