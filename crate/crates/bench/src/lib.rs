//! Shared fixtures for the benchmarks.

use mode_atlas_core::attention::ParticleState;
use mode_atlas_core::{draw_samples, SampleSet};

/// Seeded standard normal samples.
pub fn samples(n: usize, beta: f64) -> SampleSet {
    draw_samples(n, beta, 0xbe4c).expect("valid fixture")
}

/// Seeded uniform particles on the circle.
pub fn particles(n: usize, beta: f64) -> ParticleState {
    ParticleState::uniform(n, beta, 0xbe4c).expect("valid fixture")
}
