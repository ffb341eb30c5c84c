//! Monte Carlo likelihood approximation with draws of `S | Y`.
//!
//! `log L(θ) ≈ log f(y) + log (1/m) Σ_j f(x | s_j)`, where each `s_j` is a
//! conditional draw at `θ`. The white noise behind the draws is fixed for the
//! whole optimizer run, so the objective is a smooth deterministic function
//! of `θ`.

use std::time::Instant;

use nalgebra::DVector;

use super::{Estimator, FitOptions, FitReport, Layout, ParamBox, Recorder};
use crate::error::{Error, Result};
use crate::field::{standard_normals, ConditionalSampler, Params};
use crate::grid::SpatialGrid;
use crate::likelihood::nonpref_marginal_loglik;
use crate::optimize::nelder_mead;
use crate::point_process::{log_f_x_given_s, log_sum_exp, PreferentialDataset};
use crate::rng::rng_from_seed;

/// Fixed white noise for `m` conditional draws.
#[derive(Debug, Clone)]
pub struct CommonNoise {
    field: Vec<DVector<f64>>,
    obs: Vec<DVector<f64>>,
}

impl CommonNoise {
    pub fn new(n_cells: usize, n_obs: usize, m: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut field = Vec::with_capacity(m);
        let mut obs = Vec::with_capacity(m);
        for _ in 0..m {
            field.push(standard_normals(&mut rng, n_cells));
            obs.push(standard_normals(&mut rng, n_obs));
        }
        CommonNoise { field, obs }
    }

    pub fn len(&self) -> usize {
        self.field.len()
    }

    pub fn is_empty(&self) -> bool {
        self.field.is_empty()
    }
}

/// MCLA objective at `θ` for the given noise.
pub fn mcla_objective(
    theta: &Params,
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    noise: &CommonNoise,
) -> Result<f64> {
    if noise.is_empty() {
        return Err(Error::Config("MCLA needs at least one draw".into()));
    }
    let ly = nonpref_marginal_loglik(&theta.geo(), data)?;
    let sampler = ConditionalSampler::new(data, grid, &theta.geo())?;
    let mut terms = Vec::with_capacity(noise.len());
    for (zf, zo) in noise.field.iter().zip(&noise.obs) {
        let s = sampler.draw_from(zf, zo);
        terms.push(log_f_x_given_s(data.binning(), &s, theta.beta, grid)?);
    }
    let lx = log_sum_exp(terms.iter().copied()) - (noise.len() as f64).ln();
    let v = ly + lx;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical("MCLA objective is not finite".into()))
    }
}

pub fn fit_mcla(
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    m: usize,
    init: &Params,
    seed: u64,
    opts: &FitOptions,
) -> Result<FitReport> {
    opts.validate()?;
    if m == 0 {
        return Err(Error::Config("MCLA needs m >= 1 draws".into()));
    }
    if data.len() < 2 {
        return Err(Error::InsufficientData("MCLA needs at least 2 observations".into()));
    }
    data.check_grid(grid)?;
    let start = Instant::now();
    let noise = CommonNoise::new(grid.len(), data.len(), m, seed);
    let layout = Layout {
        fix_phi: opts.fix_phi,
        with_beta: true,
    };
    let boxes = ParamBox::for_grid(data, grid);
    let bounds = layout.bounds(&boxes);
    let x0 = layout.encode(&boxes.clamp_theta(init));
    let mut rec = Recorder::new();
    let min = nelder_mead(
        |x| {
            let theta = layout.decode(x);
            let v = mcla_objective(&theta, data, grid, &noise).unwrap_or(f64::NEG_INFINITY);
            rec.observe(&theta, v);
            -v
        },
        &x0,
        &bounds,
        &opts.nelder_mead(),
    );
    let theta_hat = layout.decode(&min.x);
    let value = -min.f;
    if !value.is_finite() {
        return Err(Error::Numerical("MCLA objective is not finite anywhere visited".into()));
    }
    rec.finish(&theta_hat, value);
    Ok(FitReport {
        estimator: Estimator::Mcla,
        theta_hat,
        beta_estimated: true,
        evaluations: rec.evals(),
        trace: rec.trace,
        converged: min.converged,
        reason: if min.converged {
            "simplex converged".into()
        } else {
            format!("evaluation limit {} reached", opts.max_evals)
        },
        elapsed: start.elapsed().as_secs_f64(),
        seed,
        objective: value,
        warnings: Vec::new(),
        std_errors: None,
    })
}
