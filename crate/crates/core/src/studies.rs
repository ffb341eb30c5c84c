//! Desk-scale simulation studies: predictive quality of the blocked sampler
//! against kriging, sampler cost by block size, and the estimator comparison.
//!
//! Replicate `i` of a study uses seed `base_seed + i`. Replicates run on a
//! worker pool and are collected in index order, so results do not depend on
//! the number of workers.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{default_init, fit, Estimator, FitSettings};
use crate::field::{LatentField, Params};
use crate::grid::SpatialGrid;
use crate::metrics::{evaluate, EvalResult};
use crate::predictor::{krige_field, predict_s, run_chain, MhConfig, Posterior};
use crate::rng::{derive_seed, rng_from_seed};
use crate::simulation::{SimulationConfig, Simulator};

/// Runs `f(i)` for `i in 0..count` on `workers` threads (all cores if `None`).
pub fn run_replicates<T, F>(count: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
    (v / xs.len() as f64).sqrt()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

// ---------------------------------------------------------------------------
// Prediction quality

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionStudyConfig {
    /// Simulation design; `theta.beta` is replaced by each entry of `betas`.
    pub simulation: SimulationConfig,
    pub betas: Vec<f64>,
    pub replicates: usize,
    pub base_seed: u64,
    /// Sampler run on the prediction grid at the true parameters.
    pub mh: MhConfig,
}

impl Default for PredictionStudyConfig {
    fn default() -> Self {
        PredictionStudyConfig {
            simulation: SimulationConfig {
                sim_nx: 30,
                sim_ny: 30,
                ..Default::default()
            },
            betas: vec![0.0, 1.0, 2.0],
            replicates: 10,
            base_seed: 1,
            mh: MhConfig {
                block_size: 1,
                iterations: 300,
                burn_in: 100,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub beta: f64,
    pub replicate: usize,
    pub seed: u64,
    pub mh: EvalResult,
    pub kriging: EvalResult,
    pub acceptance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub beta: f64,
    pub replicates: usize,
    pub mh_mae: f64,
    pub mh_mae_se: f64,
    pub mh_rmse: f64,
    pub kriging_mae: f64,
    pub kriging_mae_se: f64,
    pub kriging_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionStudy {
    pub rows: Vec<PredictionRow>,
    pub summary: Vec<PredictionSummary>,
}

/// One replicate: simulate, predict `S` on the prediction grid with the
/// blocked sampler and with kriging (both at the true parameters), score
/// both against the exact surface.
pub fn prediction_replicate(
    simulator: &Simulator,
    mh: &MhConfig,
    replicate: usize,
    seed: u64,
) -> Result<PredictionRow> {
    let theta = simulator.config().theta;
    let sim = simulator.simulate(seed)?;
    let grid = simulator.prediction_grid();
    let data = sim.dataset.rebin(grid)?;
    let posterior = Posterior::new(&theta, &data, grid)?;
    let mut rng = rng_from_seed(derive_seed(seed, 1));
    let init = crate::field::standard_normals(&mut rng, grid.len()).as_slice().to_vec();
    let (chain, _, _) = run_chain(&posterior, init, mh, rng)?;
    let s_mh = predict_s(&chain, mh.burn_in)?;
    let s_krig = krige_field(&data, &theta.geo(), grid)?;
    Ok(PredictionRow {
        beta: theta.beta,
        replicate,
        seed,
        mh: evaluate(&s_mh, &sim.field_pred)?,
        kriging: evaluate(&s_krig, &sim.field_pred)?,
        acceptance: mean(&chain.sweep_acceptance),
    })
}

pub fn run_prediction_study(cfg: &PredictionStudyConfig, workers: Option<usize>) -> Result<PredictionStudy> {
    if cfg.replicates == 0 || cfg.betas.is_empty() {
        return Err(Error::Config("study needs at least one replicate and one beta".into()));
    }
    cfg.mh.validate(cfg.simulation.pred_nx * cfg.simulation.pred_ny)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &beta in &cfg.betas {
        let sim_cfg = SimulationConfig {
            theta: Params {
                beta,
                ..cfg.simulation.theta
            },
            ..cfg.simulation.clone()
        };
        let simulator = Simulator::new(&sim_cfg)?;
        let block = run_replicates(cfg.replicates, workers, |i| {
            prediction_replicate(&simulator, &cfg.mh, i, cfg.base_seed + i as u64)
        })?;
        let col = |f: &dyn Fn(&PredictionRow) -> f64| block.iter().map(f).collect::<Vec<_>>();
        let mh_mae = col(&|r| r.mh.mae);
        let kr_mae = col(&|r| r.kriging.mae);
        summary.push(PredictionSummary {
            beta,
            replicates: block.len(),
            mh_mae: mean(&mh_mae),
            mh_mae_se: std_error(&mh_mae),
            mh_rmse: mean(&col(&|r| r.mh.rmse)),
            kriging_mae: mean(&kr_mae),
            kriging_mae_se: std_error(&kr_mae),
            kriging_rmse: mean(&col(&|r| r.kriging.rmse)),
        });
        rows.extend(block);
    }
    Ok(PredictionStudy { rows, summary })
}

// ---------------------------------------------------------------------------
// Sampler cost by block size

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingStudyConfig {
    /// Grid shapes `(nx, ny)`; each is also the simulation grid.
    pub grids: Vec<(usize, usize)>,
    pub block_sizes: Vec<usize>,
    pub iterations: usize,
    pub theta: Params,
    pub n: usize,
    pub seed: u64,
    pub proposal_sd: Option<f64>,
}

impl Default for TimingStudyConfig {
    fn default() -> Self {
        TimingStudyConfig {
            grids: vec![(15, 15), (30, 30)],
            block_sizes: vec![1, 5, 10],
            iterations: 1000,
            theta: Params::STUDY_TRUTH,
            n: 100,
            seed: 1,
            proposal_sd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub cells: usize,
    pub block_size: usize,
    pub iterations: usize,
    pub seconds: f64,
    pub acceptance: f64,
    /// Coordinatewise post-burn-in mean of the chain.
    #[serde(skip)]
    pub mean_field: Option<LatentField>,
    #[serde(skip)]
    pub log_density: Vec<f64>,
}

/// Times `iterations` sweeps for every block size on one fixed instance per
/// grid. Runs sequentially so the timings do not compete for cores.
pub fn run_timing_study(cfg: &TimingStudyConfig) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for &(nx, ny) in &cfg.grids {
        let sim_cfg = SimulationConfig {
            theta: cfg.theta,
            sim_nx: nx,
            sim_ny: ny,
            pred_nx: nx,
            pred_ny: ny,
            n: cfg.n,
            ..Default::default()
        };
        let simulator = Simulator::new(&sim_cfg)?;
        let sim = simulator.simulate(cfg.seed)?;
        let grid: &SpatialGrid = simulator.simulation_grid();
        let posterior = Posterior::new(&cfg.theta, &sim.dataset, grid)?;
        for &b in &cfg.block_sizes {
            let mh = MhConfig {
                block_size: b,
                proposal_sd: cfg.proposal_sd,
                iterations: cfg.iterations,
                burn_in: cfg.iterations / 10,
                adapt: false,
                seed: cfg.seed,
            };
            let mut rng = rng_from_seed(derive_seed(cfg.seed, b as u64));
            let init = crate::field::standard_normals(&mut rng, grid.len()).as_slice().to_vec();
            let start = Instant::now();
            let (chain, _, _) = run_chain(&posterior, init, &mh, rng)?;
            let seconds = start.elapsed().as_secs_f64();
            rows.push(TimingRow {
                cells: grid.len(),
                block_size: b,
                iterations: cfg.iterations,
                seconds,
                acceptance: mean(&chain.sweep_acceptance),
                mean_field: Some(predict_s(&chain, mh.burn_in)?),
                log_density: chain.log_density,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Estimator comparison

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonStudyConfig {
    /// Data are simulated on the simulation grid and fitted on the
    /// prediction grid.
    pub simulation: SimulationConfig,
    pub estimators: Vec<Estimator>,
    pub replicates: usize,
    pub base_seed: u64,
    pub settings: FitSettings,
    /// Start every fit at the truth instead of the NPG-based default.
    pub init_at_truth: bool,
}

impl Default for ComparisonStudyConfig {
    fn default() -> Self {
        let mut settings = FitSettings::default();
        settings.options.fix_phi = Some(Params::STUDY_TRUTH.phi);
        ComparisonStudyConfig {
            simulation: SimulationConfig {
                sim_nx: 30,
                sim_ny: 30,
                ..Default::default()
            },
            estimators: vec![Estimator::Mcla, Estimator::Mcem],
            replicates: 20,
            base_seed: 1,
            settings,
            init_at_truth: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub replicate: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub theta_hat: Params,
    pub converged: bool,
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamQuantiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub estimator: Estimator,
    pub replicates: usize,
    pub mu: ParamQuantiles,
    pub tau2: ParamQuantiles,
    pub sigma2: ParamQuantiles,
    pub phi: ParamQuantiles,
    pub beta: ParamQuantiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonStudy {
    pub rows: Vec<ComparisonRow>,
    pub summary: Vec<ComparisonSummary>,
}

impl ComparisonStudy {
    pub fn summary_for(&self, e: Estimator) -> Option<&ComparisonSummary> {
        self.summary.iter().find(|s| s.estimator == e)
    }
}

pub fn comparison_replicate(
    simulator: &Simulator,
    cfg: &ComparisonStudyConfig,
    replicate: usize,
) -> Result<Vec<ComparisonRow>> {
    let seed = cfg.base_seed + replicate as u64;
    let sim = simulator.simulate(seed)?;
    let grid = simulator.prediction_grid();
    let data = sim.dataset.rebin(grid)?;
    let truth = simulator.config().theta;
    let init = if cfg.init_at_truth {
        truth
    } else {
        default_init(&data, grid, &cfg.settings.options)?
    };
    cfg.estimators
        .iter()
        .map(|&e| {
            let report = fit(e, &data, grid, &init, &cfg.settings, derive_seed(seed, 7))?;
            Ok(ComparisonRow {
                replicate,
                seed,
                estimator: e,
                theta_hat: report.theta_hat,
                converged: report.converged,
                elapsed: report.elapsed,
            })
        })
        .collect()
}

pub fn run_comparison_study(cfg: &ComparisonStudyConfig, workers: Option<usize>) -> Result<ComparisonStudy> {
    if cfg.replicates == 0 || cfg.estimators.is_empty() {
        return Err(Error::Config("study needs replicates and estimators".into()));
    }
    let simulator = Simulator::new(&cfg.simulation)?;
    let per_rep = run_replicates(cfg.replicates, workers, |i| comparison_replicate(&simulator, cfg, i))?;
    let rows: Vec<ComparisonRow> = per_rep.into_iter().flatten().collect();
    let summary = cfg
        .estimators
        .iter()
        .map(|&e| {
            let sel: Vec<&ComparisonRow> = rows.iter().filter(|r| r.estimator == e).collect();
            let q = |f: &dyn Fn(&Params) -> f64| {
                let v: Vec<f64> = sel.iter().map(|r| f(&r.theta_hat)).collect();
                ParamQuantiles {
                    q25: quantile(&v, 0.25),
                    median: quantile(&v, 0.5),
                    q75: quantile(&v, 0.75),
                }
            };
            ComparisonSummary {
                estimator: e,
                replicates: sel.len(),
                mu: q(&|p| p.mu),
                tau2: q(&|p| p.tau2),
                sigma2: q(&|p| p.sigma2),
                phi: q(&|p| p.phi),
                beta: q(&|p| p.beta),
            }
        })
        .collect();
    Ok(ComparisonStudy { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(median(&[5.0]), 5.0);
    }

    #[test]
    fn replicates_are_ordered_and_worker_independent() {
        let a = run_replicates(17, Some(1), |i| Ok(i * i)).unwrap();
        let b = run_replicates(17, Some(3), |i| Ok(i * i)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[4], 16);
        assert!(run_replicates(3, Some(0), Ok).is_err());
    }

    #[test]
    fn small_prediction_study_runs() {
        let cfg = PredictionStudyConfig {
            simulation: SimulationConfig {
                sim_nx: 10,
                sim_ny: 10,
                pred_nx: 5,
                pred_ny: 5,
                n: 30,
                ..Default::default()
            },
            betas: vec![0.0, 2.0],
            replicates: 2,
            mh: MhConfig {
                iterations: 40,
                burn_in: 10,
                ..Default::default()
            },
            ..Default::default()
        };
        let s1 = run_prediction_study(&cfg, Some(1)).unwrap();
        let s2 = run_prediction_study(&cfg, Some(2)).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.rows.len(), 4);
        assert_eq!(s1.summary.len(), 2);
        assert!(s1.rows.iter().all(|r| r.mh.mae <= r.mh.rmse));
    }

    #[test]
    fn small_timing_study_runs() {
        let cfg = TimingStudyConfig {
            grids: vec![(4, 4)],
            block_sizes: vec![1, 4],
            iterations: 20,
            n: 10,
            ..Default::default()
        };
        let rows = run_timing_study(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.cells == 16 && r.seconds >= 0.0));
    }

    #[test]
    fn small_comparison_study_runs() {
        let mut cfg = ComparisonStudyConfig {
            simulation: SimulationConfig {
                sim_nx: 8,
                sim_ny: 8,
                pred_nx: 4,
                pred_ny: 4,
                n: 25,
                ..Default::default()
            },
            estimators: vec![Estimator::Npg, Estimator::Mcla, Estimator::Saem],
            replicates: 2,
            ..Default::default()
        };
        cfg.settings.mcla_draws = 3;
        cfg.settings.options.max_evals = 200;
        cfg.settings.em.max_iter = 4;
        cfg.settings.em.draws = 2;
        cfg.settings.em.mh.burn_in = 5;
        let s = run_comparison_study(&cfg, Some(2)).unwrap();
        assert_eq!(s.rows.len(), 6);
        assert_eq!(s.summary_for(Estimator::Mcla).unwrap().replicates, 2);
        assert!(s.rows.iter().all(|r| r.theta_hat.phi == 0.15));
    }
}
