//! Shared fixtures for the criterion benches.

use cbo_core::sde::SimConfig;

pub fn quadratic_config(d: usize, n_particles: usize) -> SimConfig {
    SimConfig::builder(d, n_particles)
        .sharpness(10.0)
        .noise_load(0.5)
        .dt(0.01)
        .t_end(0.1)
        .seed(7)
        .build()
        .expect("fixture config is valid")
}
