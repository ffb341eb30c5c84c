//! Simulation of preferentially sampled datasets.
//!
//! `S` is drawn jointly at the simulation-grid centroids and the
//! prediction-grid centroids, so the true surface on the prediction grid is
//! exact rather than interpolated. Locations follow the grid intensity
//! `∝ exp(β S)` and are placed uniformly inside their cells; each response
//! reads `S` at the simulation cell containing it.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{kernel_matrix, standard_normals, Exponential, Factor, LatentField, Params};
use crate::grid::{Point, Region, SpatialGrid};
use crate::point_process::{sample_locations_with, PreferentialDataset};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub theta: Params,
    pub region: Region,
    pub sim_nx: usize,
    pub sim_ny: usize,
    /// Number of sampled locations.
    pub n: usize,
    pub pred_nx: usize,
    pub pred_ny: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            theta: Params::STUDY_TRUTH,
            region: Region::UNIT_SQUARE,
            sim_nx: 50,
            sim_ny: 50,
            n: 100,
            pred_nx: 15,
            pred_ny: 15,
        }
    }
}

impl SimulationConfig {
    pub fn simulation_grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(self.region, self.sim_nx, self.sim_ny)
    }

    pub fn prediction_grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(self.region, self.pred_nx, self.pred_ny)
    }
}

/// One simulated dataset with its truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    /// Locations and responses, binned on the simulation grid.
    pub dataset: PreferentialDataset,
    /// `S` at the simulation-grid centroids.
    pub field_sim: LatentField,
    /// `S` at the prediction-grid centroids.
    pub field_pred: LatentField,
    pub seed: u64,
}

/// Reusable simulator: the joint covariance of both grids is factorized once.
pub struct Simulator {
    cfg: SimulationConfig,
    sim_grid: SpatialGrid,
    pred_grid: SpatialGrid,
    factor: Factor,
    /// Row of the joint point set for each prediction centroid.
    pred_rows: Vec<usize>,
}

impl Simulator {
    pub fn new(cfg: &SimulationConfig) -> Result<Self> {
        cfg.theta.validate()?;
        let sim_grid = cfg.simulation_grid()?;
        let pred_grid = cfg.prediction_grid()?;
        let mut points: Vec<Point> = sim_grid.centroids().to_vec();
        let mut pred_rows = Vec::with_capacity(pred_grid.len());
        for &p in pred_grid.centroids() {
            match sim_grid.locate(p).filter(|&c| sim_grid.centroid(c) == p) {
                Some(c) => pred_rows.push(c),
                None => {
                    pred_rows.push(points.len());
                    points.push(p);
                }
            }
        }
        let r = kernel_matrix(&points, &Exponential::new(cfg.theta.phi)?);
        Ok(Simulator {
            cfg: cfg.clone(),
            sim_grid,
            pred_grid,
            factor: Factor::new(r)?,
            pred_rows,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.cfg
    }

    pub fn simulation_grid(&self) -> &SpatialGrid {
        &self.sim_grid
    }

    pub fn prediction_grid(&self) -> &SpatialGrid {
        &self.pred_grid
    }

    pub fn simulate(&self, seed: u64) -> Result<Simulation> {
        let theta = self.cfg.theta;
        let mut rng = rng_from_seed(seed);
        let z = standard_normals(&mut rng, self.factor.dim());
        let joint = self.factor.mul_l(&z) * theta.sigma2.sqrt();
        let n_sim = self.sim_grid.len();
        let field_sim = LatentField::new(joint.as_slice()[..n_sim].to_vec())?;
        let field_pred = LatentField::new(self.pred_rows.iter().map(|&r| joint[r]).collect())?;
        let locations = sample_locations_with(&field_sim, &self.sim_grid, theta.beta, self.cfg.n, &mut rng)?;
        let tau = theta.tau2.sqrt();
        let mut y = Vec::with_capacity(locations.len());
        for p in &locations {
            let cell = self
                .sim_grid
                .locate(*p)
                .ok_or_else(|| Error::Numerical("sampled location fell outside the grid".into()))?;
            let eps: f64 = rng.sample(StandardNormal);
            y.push(theta.mu + field_sim.values()[cell] + tau * eps);
        }
        let dataset = PreferentialDataset::new(locations, y, &self.sim_grid)?;
        Ok(Simulation {
            dataset,
            field_sim,
            field_pred,
            seed,
        })
    }
}

/// One-off simulation.
pub fn simulate(cfg: &SimulationConfig, seed: u64) -> Result<Simulation> {
    Simulator::new(cfg)?.simulate(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(beta: f64) -> SimulationConfig {
        SimulationConfig {
            theta: Params {
                beta,
                ..Params::STUDY_TRUTH
            },
            sim_nx: 20,
            sim_ny: 20,
            n: 100,
            pred_nx: 10,
            pred_ny: 10,
            ..Default::default()
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let c = cfg(2.0);
        let a = simulate(&c, 4).unwrap();
        assert_eq!(a.dataset.len(), 100);
        assert_eq!(a.field_sim.len(), 400);
        assert_eq!(a.field_pred.len(), 100);
        assert_eq!(a, simulate(&c, 4).unwrap());
        assert_ne!(a.dataset.y(), simulate(&c, 5).unwrap().dataset.y());
    }

    #[test]
    fn shared_centroids_are_reused() {
        let c = SimulationConfig {
            sim_nx: 9,
            sim_ny: 9,
            pred_nx: 3,
            pred_ny: 3,
            n: 5,
            ..cfg(0.0)
        };
        let sim = Simulator::new(&c).unwrap();
        let s = sim.simulate(1).unwrap();
        // 3×3 centroids coincide with centroids of the 9×9 grid.
        let sg = sim.simulation_grid();
        for (k, &p) in sim.prediction_grid().centroids().iter().enumerate() {
            let cell = sg.locate(p).unwrap();
            assert_eq!(s.field_pred.values()[k], s.field_sim.values()[cell]);
        }
    }

    #[test]
    fn responses_follow_the_field() {
        let c = SimulationConfig { n: 400, ..cfg(0.0) };
        let s = simulate(&c, 9).unwrap();
        let cells = &s.dataset.binning().cell_of;
        let resid: Vec<f64> = s
            .dataset
            .y()
            .iter()
            .zip(cells)
            .map(|(y, &c0)| y - 4.0 - s.field_sim.values()[c0])
            .collect();
        let m = resid.iter().sum::<f64>() / 400.0;
        let v = resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / 399.0;
        assert!(m.abs() < 3.0 * (0.1f64 / 400.0).sqrt());
        assert!((v - 0.1).abs() < 0.03);
    }

    #[test]
    fn preferential_locations_sit_high() {
        let s = simulate(&cfg(2.0), 12).unwrap();
        let at_obs: f64 = s
            .dataset
            .binning()
            .cell_of
            .iter()
            .map(|&c| s.field_sim.values()[c])
            .sum::<f64>()
            / 100.0;
        assert!(at_obs > s.field_sim.mean() + 0.5);
    }
}
