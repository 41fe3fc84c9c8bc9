//! Shared fixtures for the solver benchmarks.

use softsim::harness::preset;
use softsim::harness::run::build;
use softsim::{Simulator, State};

/// Hex beam under gravity at a given resolution and a state a few steps into the
/// motion, so the step solve has real work to do.
pub fn sagging_beam(resolution: [usize; 3]) -> (Simulator, State) {
    let mut config = preset("beam-a1-hex").expect("registered scenario");
    config.mesh.resolution = resolution;
    let sim = build(&config, false).expect("valid preset").sim;
    let mut state = sim.initial_state();
    for _ in 0..3 {
        state = sim.step(&state).expect("stable start");
    }
    (sim, state)
}
