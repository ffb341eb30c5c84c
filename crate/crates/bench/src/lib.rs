//! Shared fixtures for the benchmarks in `benches/`.

use prefgeo_core::{Params, PreferentialDataset, SimulationConfig, Simulator, SpatialGrid};

/// One simulated instance on an `nx × ny` grid (also the simulation grid).
pub fn instance(nx: usize, ny: usize, n: usize, seed: u64) -> (SpatialGrid, PreferentialDataset, Params) {
    let cfg = SimulationConfig {
        sim_nx: nx,
        sim_ny: ny,
        pred_nx: nx,
        pred_ny: ny,
        n,
        ..Default::default()
    };
    let simulator = Simulator::new(&cfg).expect("valid simulation config");
    let sim = simulator.simulate(seed).expect("simulation succeeds");
    (simulator.simulation_grid().clone(), sim.dataset, cfg.theta)
}
