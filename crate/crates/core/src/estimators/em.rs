//! Monte Carlo and stochastic-approximation EM.
//!
//! Each iteration draws `L` states of `S | X, Y` at the current `θ` from the
//! blocked sampler, folds them into the accumulators with weight `γ_k` and
//! maximizes `Q̂`. The mean and both variances have closed forms; `β` and `φ`
//! enter `Q̂` through separate terms and are found by one-dimensional
//! searches (with `σ²` profiled out for `φ`).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{CorrelationCache, Estimator, FitReport, ParamBox, TraceEntry};
use crate::error::{Error, Result};
use crate::field::{Factor, LatentField, Params};
use crate::grid::SpatialGrid;
use crate::likelihood::{complete_loglik, LogNormCurve, SufficientStats};
use crate::optimize::brent;
use crate::point_process::PreferentialDataset;
use crate::predictor::{BlockSampler, ChainState, MhConfig, Posterior};
use crate::rng::rng_from_seed;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmVariant {
    Mcem,
    Saem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// Maximum number of iterations `W`.
    pub max_iter: usize,
    /// Fraction `c` of iterations without memory.
    pub c: f64,
    /// Draws `L` per E-step.
    pub draws: usize,
    /// Sampler settings; `burn_in` sweeps are run at every iteration and the
    /// `L` draws are spaced `⌈burn_in/10⌉` sweeps apart. `iterations` is unused.
    pub mh: MhConfig,
    /// Tolerance on the relative parameter change.
    pub tol: f64,
    /// Consecutive iterations below `tol` required to stop.
    pub patience: usize,
    /// Lower bound on the denominator of the relative change.
    pub rel_floor: f64,
    pub fix_phi: Option<f64>,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 400,
            c: 0.25,
            draws: 20,
            mh: MhConfig::default(),
            tol: 1e-3,
            patience: 3,
            rel_floor: 0.1,
            fix_phi: None,
        }
    }
}

impl EmConfig {
    pub fn validate(&self, n_cells: usize) -> Result<()> {
        if self.max_iter == 0 || self.draws == 0 {
            return Err(Error::Config("W and L must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.c) {
            return Err(Error::Config(format!("c must lie in [0, 1], got {}", self.c)));
        }
        if !(self.tol > 0.0) || !(self.rel_floor > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.mh.block_size == 0 || self.mh.block_size > n_cells {
            return Err(Error::Config(format!(
                "block size must be in [1, {n_cells}], got {}",
                self.mh.block_size
            )));
        }
        if let Some(sd) = self.mh.proposal_sd {
            if !(sd > 0.0) {
                return Err(Error::Config("proposal sd must be positive".into()));
            }
        }
        if let Some(phi) = self.fix_phi {
            if !(phi > 0.0) {
                return Err(Error::Config("fixed phi must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn spacing(&self) -> usize {
        self.mh.burn_in.div_ceil(10).max(1)
    }
}

/// Number of memory-free iterations, `⌊cW⌋`.
pub fn memory_free_iterations(c: f64, w: usize) -> usize {
    (c * w as f64 + 1e-9).floor() as usize
}

/// `γ_k = 1` for `k ≤ cW`, else `1/(k − cW)`, with `cW` rounded down so the
/// weights never exceed 1.
pub fn saem_weight(k: usize, c: f64, w: usize) -> f64 {
    let free = memory_free_iterations(c, w);
    if k <= free {
        1.0
    } else {
        1.0 / (k - free) as f64
    }
}

/// Stochastic-approximation update of the accumulators with new draws.
pub fn e_step_update(
    stats_prev: Option<&SufficientStats>,
    draws: Vec<LatentField>,
    gamma: f64,
    theta_k: &Params,
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    r_factor: &Factor,
) -> Result<SufficientStats> {
    if draws.is_empty() {
        return Err(Error::Config("E-step needs at least one draw".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    data.check_grid(grid)?;
    let big_n = grid.len();
    if draws.iter().any(|d| d.len() != big_n) || r_factor.dim() != big_n {
        return Err(Error::Dimension("draws do not match the grid".into()));
    }
    let l = draws.len() as f64;
    let cells = &data.binning().cell_of;
    let mut s_mean = vec![0.0; big_n];
    let mut s2_obs = vec![0.0; data.len()];
    let mut quad = 0.0;
    let mut log_norm = 0.0;
    for d in &draws {
        let v = d.values();
        for (m, x) in s_mean.iter_mut().zip(v) {
            *m += x / l;
        }
        for (acc, &c) in s2_obs.iter_mut().zip(cells) {
            *acc += v[c] * v[c] / l;
        }
        quad += r_factor.quad_form(&d.to_dvector()) / l;
        log_norm += crate::point_process::log_normalizer(v, theta_k.beta, grid.cell_area()) / l;
    }
    let curve = LogNormCurve::from_draws(&draws, grid.cell_area());
    let mix = |fresh: f64, old: f64| gamma * fresh + (1.0 - gamma) * old;
    let stats = match stats_prev {
        Some(prev) if gamma < 1.0 => {
            if prev.s_mean.len() != big_n || prev.s2_obs.len() != data.len() {
                return Err(Error::Dimension("previous accumulators do not match".into()));
            }
            let prev_curve = prev
                .log_norm_curve
                .clone()
                .ok_or_else(|| Error::Numerical("previous accumulators lack the normalizer curve".into()))?;
            SufficientStats {
                s_mean: s_mean.iter().zip(&prev.s_mean).map(|(a, b)| mix(*a, *b)).collect(),
                s2_obs: s2_obs.iter().zip(&prev.s2_obs).map(|(a, b)| mix(*a, *b)).collect(),
                log_norm: mix(log_norm, prev.log_norm),
                quad: mix(quad, prev.quad),
                gamma,
                draws,
                quad_history: prev.quad,
                log_norm_curve: Some(prev_curve.convex_update(&curve, gamma)),
                log_norm_history: Some(prev_curve),
            }
        }
        _ => SufficientStats {
            s_mean,
            s2_obs,
            log_norm,
            quad,
            gamma: 1.0,
            draws,
            quad_history: 0.0,
            log_norm_history: None,
            log_norm_curve: Some(curve),
        },
    };
    stats.check_finite()?;
    Ok(stats)
}

/// Maximizer of `Q̂` given the accumulators.
pub fn m_step(
    stats: &SufficientStats,
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    theta_k: &Params,
    fix_phi: Option<f64>,
) -> Result<Params> {
    let mut cache = CorrelationCache::default();
    m_step_cached(stats, data, grid, theta_k, fix_phi, &mut cache)
}

pub(crate) fn m_step_cached(
    stats: &SufficientStats,
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    theta_k: &Params,
    fix_phi: Option<f64>,
    cache: &mut CorrelationCache,
) -> Result<Params> {
    stats.check_finite()?;
    data.check_grid(grid)?;
    if data.is_empty() {
        return Err(Error::InsufficientData("M-step needs observations".into()));
    }
    let boxes = ParamBox::for_grid(data, grid);
    let n = data.len() as f64;
    let big_n = grid.len() as f64;
    let s_obs = stats.s_obs(data);

    let mu = data.y().iter().zip(&s_obs).map(|(y, s)| y - s).sum::<f64>() / n;
    let rss = stats.rss(data, mu);
    if rss < 0.0 {
        return Err(Error::Numerical(format!("negative residual accumulator {rss}")));
    }
    let exp_clamp = |v: f64, (lo, hi): (f64, f64)| v.max(lo.exp()).min(hi.exp());
    let tau2 = exp_clamp(rss / n, boxes.log_tau2);

    let linear: f64 = s_obs.iter().sum();
    let area = grid.cell_area();
    let b = brent(
        |beta| -(beta * linear - n * stats.log_norm_at(beta, area)),
        boxes.beta.0,
        boxes.beta.1,
        1e-7,
        200,
    );
    let beta = b.x[0];

    let phi = match fix_phi {
        Some(phi) => phi,
        None => {
            let profile = |log_phi: f64, cache: &mut CorrelationCache| -> f64 {
                let Ok(f) = cache.factor(grid, log_phi.exp()) else {
                    return f64::INFINITY;
                };
                let q = stats.quad_at(f);
                if !(q > 0.0) {
                    return f64::INFINITY;
                }
                0.5 * big_n * (q / big_n).ln() + 0.5 * f.log_det()
            };
            let start = theta_k.phi.ln().clamp(boxes.log_phi.0, boxes.log_phi.1);
            let m = brent(|lp| profile(lp, cache), boxes.log_phi.0, boxes.log_phi.1, 1e-5, 100);
            // Keep the current range if the search did not improve on it.
            if m.f <= profile(start, cache) {
                m.x[0].exp()
            } else {
                start.exp()
            }
        }
    };
    let factor = cache.factor(grid, phi)?;
    let quad = stats.quad_at(factor);
    if !(quad >= 0.0) {
        return Err(Error::Numerical(format!("negative quadratic accumulator {quad}")));
    }
    let sigma2 = exp_clamp(quad / big_n, boxes.log_sigma2);
    let theta = Params {
        mu: mu.clamp(boxes.mu.0, boxes.mu.1),
        tau2,
        sigma2,
        phi,
        beta,
    };
    theta.validate()?;
    Ok(theta)
}

fn max_relative_change(old: &Params, new: &Params, floor: f64, fixed_phi: bool) -> f64 {
    let a = old.as_array();
    let b = new.as_array();
    (0..5)
        .filter(|&i| !(fixed_phi && i == 3))
        .map(|i| (b[i] - a[i]).abs() / a[i].abs().max(floor))
        .fold(0.0, f64::max)
}

/// Stochastic EM fit. MCEM uses `γ_k ≡ 1` regardless of `cfg.c`.
pub fn fit_em(
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    init: &Params,
    cfg: &EmConfig,
    seed: u64,
    variant: EmVariant,
) -> Result<FitReport> {
    cfg.validate(grid.len())?;
    data.check_grid(grid)?;
    if data.len() < 2 {
        return Err(Error::InsufficientData("EM needs at least 2 observations".into()));
    }
    let start = Instant::now();
    let c = match variant {
        EmVariant::Mcem => 1.0,
        EmVariant::Saem => cfg.c,
    };
    let boxes = ParamBox::for_grid(data, grid);
    let mut theta = boxes.clamp_theta(init);
    if let Some(phi) = cfg.fix_phi {
        theta.phi = phi;
    }
    theta.validate()?;

    let mut rng = rng_from_seed(seed);
    let init_state: Vec<f64> = (0..grid.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut state_values = Some(init_state);
    let mut cache = CorrelationCache::default();
    let mut stats: Option<SufficientStats> = None;
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut calm = 0usize;
    let mut converged = false;
    let spacing = cfg.spacing();

    for k in 1..=cfg.max_iter {
        let (factor, precision) = cache.both(grid, theta.phi)?;
        let factor = factor.clone();
        let posterior = Posterior::from_precision(&theta, data, grid, precision.clone())?;
        let mut state = ChainState::new(&posterior, state_values.take().expect("state kept"));
        let sd = cfg.mh.resolved_sd(theta.sigma2);
        let mut sampler = BlockSampler::new(&posterior, cfg.mh.block_size, sd, rng);
        let nb = sampler.n_blocks();
        let mut moved = 0usize;
        let mut batch = 0usize;
        for sweep in 0..cfg.mh.burn_in {
            let m = sampler.sweep(&mut state);
            moved += m;
            batch += m;
            if cfg.mh.adapt && (sweep + 1) % 10 == 0 {
                let rate = batch as f64 / (10 * nb) as f64;
                let sd = sampler.proposal_sd();
                sampler.set_proposal_sd(if rate < 0.2 {
                    sd * 0.8
                } else if rate > 0.4 {
                    sd * 1.25
                } else {
                    sd
                });
                batch = 0;
            }
        }
        let mut draws = Vec::with_capacity(cfg.draws);
        for _ in 0..cfg.draws {
            for _ in 0..spacing {
                moved += sampler.sweep(&mut state);
            }
            draws.push(state.field());
        }
        let sweeps = cfg.mh.burn_in + cfg.draws * spacing;
        let rate = moved as f64 / (sweeps * nb) as f64;
        if rate < 0.01 {
            warnings.push(format!("iteration {k}: block acceptance collapsed to {rate:.4}"));
        }
        rng = sampler.into_rng();
        state_values = Some(state.values().to_vec());

        let gamma = saem_weight(k, c, cfg.max_iter);
        let updated = e_step_update(stats.as_ref(), draws, gamma, &theta, data, grid, &factor)?;
        let next = m_step_cached(&updated, data, grid, &theta, cfg.fix_phi, &mut cache)?;
        let mean_field = LatentField::new(updated.s_mean.clone())?;
        let proxy = complete_loglik(&next, &mean_field, data, grid, cache.factor(grid, next.phi)?)?;
        if !proxy.is_finite() {
            return Err(Error::Numerical(format!("Q is not finite at iteration {k}")));
        }
        trace.push(TraceEntry {
            iteration: k,
            theta: next,
            objective: proxy,
        });
        let change = max_relative_change(&theta, &next, cfg.rel_floor, cfg.fix_phi.is_some());
        theta = next;
        stats = Some(updated);
        calm = if change < cfg.tol { calm + 1 } else { 0 };
        if calm >= cfg.patience {
            converged = true;
            break;
        }
    }

    let last = *trace.last().expect("at least one iteration");
    let iterations = trace.len();
    Ok(FitReport {
        estimator: match variant {
            EmVariant::Mcem => Estimator::Mcem,
            EmVariant::Saem => Estimator::Saem,
        },
        theta_hat: last.theta,
        beta_estimated: true,
        trace,
        converged,
        reason: if converged {
            format!("relative change below {} for {} iterations", cfg.tol, cfg.patience)
        } else {
            format!("iteration limit {} reached", cfg.max_iter)
        },
        elapsed: start.elapsed().as_secs_f64(),
        seed,
        objective: last.objective,
        evaluations: iterations,
        warnings,
        std_errors: None,
    })
}
