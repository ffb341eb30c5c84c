//! Blocked random-walk Metropolis–Hastings for `S | X, Y` on the grid.
//!
//! The target kernel is
//!
//! ```text
//! ℓ(S) = −Σ_i (y_i − μ − S_{c(i)})² / (2τ²) + β Σ_j n_j S_j
//!        − n log Σ_j Δ exp(β S_j) − S′R⁻¹S / (2σ²)
//! ```
//!
//! A sweep visits contiguous row-major blocks in order. For each block every
//! coordinate gets an independent `N(0, δ²)` perturbation and the block is
//! accepted or rejected jointly. The chain caches `R⁻¹S` and the shifted
//! intensity sum, so a block costs `O(|G|²)` to evaluate and `O(|G|·N)` to
//! commit.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{kernel_matrix, Exponential, Factor, LatentField, Params};
use crate::grid::SpatialGrid;
use crate::point_process::{log_sum_exp, PreferentialDataset};
use crate::rng::{rng_from_seed, SimRng};

/// Settings of the blocked sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MhConfig {
    /// Cells per block.
    pub block_size: usize,
    /// Proposal standard deviation `δ`; `None` uses `0.5·σ`.
    pub proposal_sd: Option<f64>,
    /// Number of sweeps.
    pub iterations: usize,
    /// Sweeps discarded before averaging; adaptation only happens here.
    pub burn_in: usize,
    /// Tune `δ` during burn-in towards 20–40% block acceptance.
    pub adapt: bool,
    pub seed: u64,
}

impl Default for MhConfig {
    fn default() -> Self {
        MhConfig {
            block_size: 1,
            proposal_sd: None,
            iterations: 300,
            burn_in: 100,
            adapt: false,
            seed: 0,
        }
    }
}

impl MhConfig {
    pub fn validate(&self, n_cells: usize) -> Result<()> {
        if self.block_size == 0 || self.block_size > n_cells {
            return Err(Error::Config(format!(
                "block size must be in [1, {n_cells}], got {}",
                self.block_size
            )));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the number of iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if let Some(sd) = self.proposal_sd {
            if !(sd > 0.0) || !sd.is_finite() {
                return Err(Error::Config(format!("proposal sd must be > 0, got {sd}")));
            }
        }
        Ok(())
    }

    pub fn resolved_sd(&self, sigma2: f64) -> f64 {
        self.proposal_sd.unwrap_or(0.5 * sigma2.sqrt())
    }
}

/// Output of [`sample_predictive`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    /// State after every sweep.
    pub samples: Vec<LatentField>,
    /// `ℓ(S)` after every sweep (up to an additive constant).
    pub log_density: Vec<f64>,
    /// Fraction of sweeps in which each block moved.
    pub acceptance_rate: Vec<f64>,
    /// Overall block acceptance per sweep.
    pub sweep_acceptance: Vec<f64>,
    /// Proposal sd in effect after burn-in.
    pub proposal_sd: f64,
    /// Set when no block moved for 100 consecutive sweeps.
    pub stalled: bool,
}

/// Contiguous row-major blocks of `block_size` cells; the last may be shorter.
pub fn block_partition(n_cells: usize, block_size: usize) -> Vec<std::ops::Range<usize>> {
    assert!(block_size >= 1, "block size must be positive");
    (0..n_cells)
        .step_by(block_size)
        .map(|start| start..(start + block_size).min(n_cells))
        .collect()
}

/// The posterior kernel for fixed `θ`, with `R⁻¹` precomputed.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub(crate) theta: Params,
    /// `R(φ)⁻¹`, column-major.
    pub(crate) precision: DMatrix<f64>,
    /// `n_j` per cell.
    pub(crate) counts: Vec<f64>,
    /// `Σ_{i∈j} (y_i − μ)` per cell.
    pub(crate) resid_sum: Vec<f64>,
    /// `Σ_i (y_i − μ)²`.
    pub(crate) resid_sq: f64,
    pub(crate) n_obs: f64,
    pub(crate) cell_area: f64,
}

impl Posterior {
    pub fn new(theta: &Params, data: &PreferentialDataset, grid: &SpatialGrid) -> Result<Self> {
        let r = kernel_matrix(grid.centroids(), &Exponential::new(theta.phi)?);
        let factor = Factor::new(r)?;
        Self::with_factor(theta, data, grid, &factor)
    }

    /// Builds the kernel from an existing factor of `R(φ)`.
    pub fn with_factor(
        theta: &Params,
        data: &PreferentialDataset,
        grid: &SpatialGrid,
        r_factor: &Factor,
    ) -> Result<Self> {
        theta.validate()?;
        data.check_grid(grid)?;
        if !data.is_empty() && !(theta.tau2 > 0.0) {
            return Err(Error::ParamDomain(
                "the sampler needs tau2 > 0 when there are observations".into(),
            ));
        }
        let big_n = grid.len();
        if r_factor.dim() != big_n {
            return Err(Error::Dimension("factor does not match the grid".into()));
        }
        let inv = r_factor.inverse();
        let precision = DMatrix::from_fn(big_n, big_n, |i, j| 0.5 * (inv[(i, j)] + inv[(j, i)]));
        Self::from_precision(theta, data, grid, precision)
    }

    /// Builds the kernel from a precomputed symmetric `R(φ)⁻¹`.
    pub fn from_precision(
        theta: &Params,
        data: &PreferentialDataset,
        grid: &SpatialGrid,
        precision: DMatrix<f64>,
    ) -> Result<Self> {
        theta.validate()?;
        data.check_grid(grid)?;
        if !data.is_empty() && !(theta.tau2 > 0.0) {
            return Err(Error::ParamDomain(
                "the sampler needs tau2 > 0 when there are observations".into(),
            ));
        }
        let big_n = grid.len();
        if precision.nrows() != big_n || precision.ncols() != big_n {
            return Err(Error::Dimension("precision does not match the grid".into()));
        }
        let mut counts = vec![0.0; big_n];
        let mut resid_sum = vec![0.0; big_n];
        let mut resid_sq = 0.0;
        for (&c, &y) in data.binning().cell_of.iter().zip(data.y()) {
            counts[c] += 1.0;
            resid_sum[c] += y - theta.mu;
            resid_sq += (y - theta.mu).powi(2);
        }
        Ok(Posterior {
            theta: *theta,
            precision,
            counts,
            resid_sum,
            resid_sq,
            n_obs: data.len() as f64,
            cell_area: grid.cell_area(),
        })
    }

    pub fn theta(&self) -> &Params {
        &self.theta
    }

    pub fn n_cells(&self) -> usize {
        self.counts.len()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub(crate) fn meas_weight(&self) -> f64 {
        if self.n_obs > 0.0 {
            0.5 / self.theta.tau2
        } else {
            0.0
        }
    }

    /// Full evaluation of `ℓ(S)`, `O(N²)`.
    pub fn log_density(&self, s: &[f64]) -> f64 {
        let q = &self.precision;
        let n = s.len();
        let mut quad = 0.0;
        for j in 0..n {
            let col = &q.as_slice()[j * n..(j + 1) * n];
            let dot: f64 = col.iter().zip(s).map(|(a, b)| a * b).sum();
            quad += s[j] * dot;
        }
        self.log_density_with_quad(s, quad)
    }

    fn log_density_with_quad(&self, s: &[f64], quad: f64) -> f64 {
        let beta = self.theta.beta;
        let mut meas = self.resid_sq;
        let mut linear = 0.0;
        for ((&c, &r), &v) in self.counts.iter().zip(&self.resid_sum).zip(s) {
            meas += c * v * v - 2.0 * r * v;
            linear += c * v;
        }
        let norm = if self.n_obs > 0.0 {
            self.n_obs * (self.cell_area.ln() + log_sum_exp(s.iter().map(|&v| beta * v)))
        } else {
            0.0
        };
        -self.meas_weight() * meas + beta * linear - norm - 0.5 * quad / self.theta.sigma2
    }

    /// Log acceptance ratio `ℓ(S_p) − ℓ(S_c)` for proposals that differ from
    /// the current state only on the cells of `block`.
    ///
    /// `rs_block` is `(R⁻¹S_c)` on the block, `e_block` the cached terms
    /// `exp(β S_c,j − shift)` on the block and `sum` their total over all
    /// cells. The proposal's terms are written to `e_new`.
    #[allow(clippy::too_many_arguments)]
    fn block_delta(
        &self,
        current: &[f64],
        proposed_block: &[f64],
        block: std::ops::Range<usize>,
        rs_block: &[f64],
        e_block: &[f64],
        (sum, shift): (f64, f64),
        e_new: &mut [f64],
    ) -> f64 {
        let beta = self.theta.beta;
        let q = self.precision.as_slice();
        let n = self.n_cells();
        let start = block.start;
        let len = block.len();
        let cur = &current[block];
        let mut meas = 0.0;
        let mut linear = 0.0;
        let mut e_old = 0.0;
        let mut e_sum = 0.0;
        let mut cross = 0.0;
        let mut inner = 0.0;
        let with_pp = self.n_obs > 0.0;
        for a in 0..len {
            let j = start + a;
            let sc = cur[a];
            let sp = proposed_block[a];
            let d = sp - sc;
            let cnt = self.counts[j];
            if cnt > 0.0 {
                meas += cnt * (sp * sp - sc * sc) - 2.0 * self.resid_sum[j] * d;
                linear += cnt * d;
            }
            if with_pp {
                let e = (beta * sp - shift).exp();
                e_new[a] = e;
                e_sum += e;
                e_old += e_block[a];
            }
            cross += d * rs_block[a];
            let col = &q[j * n + start..j * n + start + len];
            let mut qd = 0.0;
            for ((qv, p), c) in col.iter().zip(proposed_block).zip(cur) {
                qd += qv * (p - c);
            }
            inner += d * qd;
        }
        let norm = if with_pp {
            self.n_obs * ((e_sum - e_old) / sum).ln_1p()
        } else {
            0.0
        };
        -self.meas_weight() * meas + beta * linear - norm - 0.5 * (2.0 * cross + inner) / self.theta.sigma2
    }
}

/// `log f(S_p|X,Y) − log f(S_c|X,Y)` for states that differ only on one block.
pub fn block_log_acceptance(s_current: &LatentField, s_proposed: &LatentField, posterior: &Posterior) -> Result<f64> {
    let n = posterior.n_cells();
    if s_current.len() != n || s_proposed.len() != n {
        return Err(Error::Dimension("state length does not match the grid".into()));
    }
    let cur = s_current.values();
    let prop = s_proposed.values();
    let changed: Vec<usize> = (0..n).filter(|&j| cur[j] != prop[j]).collect();
    let (Some(&first), Some(&last)) = (changed.first(), changed.last()) else {
        return Ok(0.0);
    };
    let block = first..last + 1;
    let state = ChainState::new(posterior, cur.to_vec());
    let mut e_new = vec![0.0; block.len()];
    Ok(posterior.block_delta(
        cur,
        &prop[block.clone()],
        block.clone(),
        &state.rs[block.clone()],
        &state.e[block],
        (state.intensity_sum, state.shift),
        &mut e_new,
    ))
}

/// Mutable chain state with cached `R⁻¹S`, intensity terms and `ℓ(S)`.
#[derive(Debug, Clone)]
pub struct ChainState {
    s: Vec<f64>,
    rs: Vec<f64>,
    /// `exp(β s_j − shift)`.
    e: Vec<f64>,
    shift: f64,
    intensity_sum: f64,
    log_density: f64,
}

impl ChainState {
    pub fn new(posterior: &Posterior, s: Vec<f64>) -> Self {
        let n = s.len();
        let mut state = ChainState {
            rs: vec![0.0; n],
            e: vec![0.0; n],
            s,
            shift: 0.0,
            intensity_sum: 0.0,
            log_density: 0.0,
        };
        state.refresh(posterior);
        state
    }

    pub fn values(&self) -> &[f64] {
        &self.s
    }

    pub fn field(&self) -> LatentField {
        LatentField::from_vec_unchecked(self.s.clone())
    }

    /// Cached `ℓ(S)`.
    pub fn log_density(&self) -> f64 {
        self.log_density
    }

    /// Rebinds the state to another kernel (e.g. after a parameter update).
    pub fn rebind(self, posterior: &Posterior) -> Self {
        ChainState::new(posterior, self.s)
    }

    /// Recomputes every cache from `s`.
    fn refresh(&mut self, posterior: &Posterior) {
        let n = self.s.len();
        let q = posterior.precision.as_slice();
        for j in 0..n {
            let col = &q[j * n..(j + 1) * n];
            self.rs[j] = col.iter().zip(&self.s).map(|(a, b)| a * b).sum();
        }
        self.refresh_intensity(posterior);
        let quad: f64 = self.s.iter().zip(&self.rs).map(|(a, b)| a * b).sum();
        self.log_density = posterior.log_density_with_quad(&self.s, quad);
    }

    fn refresh_intensity(&mut self, posterior: &Posterior) {
        let beta = posterior.theta.beta;
        self.shift = self.s.iter().map(|&v| beta * v).fold(f64::NEG_INFINITY, f64::max);
        for (e, &v) in self.e.iter_mut().zip(&self.s) {
            *e = (beta * v - self.shift).exp();
        }
        self.intensity_sum = self.e.iter().sum();
    }
}

/// Sampler bound to a posterior and a block partition.
pub struct BlockSampler<'a> {
    posterior: &'a Posterior,
    blocks: Vec<std::ops::Range<usize>>,
    sd: f64,
    rng: SimRng,
    proposal: Vec<f64>,
    proposal_e: Vec<f64>,
    accepted: Vec<usize>,
    sweeps: usize,
}

/// Sweeps between full recomputations of the cached quantities.
const REFRESH_EVERY: usize = 50;

impl<'a> BlockSampler<'a> {
    pub fn new(posterior: &'a Posterior, block_size: usize, sd: f64, rng: SimRng) -> Self {
        let blocks = block_partition(posterior.n_cells(), block_size);
        BlockSampler {
            accepted: vec![0; blocks.len()],
            proposal: vec![0.0; block_size],
            proposal_e: vec![0.0; block_size],
            posterior,
            blocks,
            sd,
            rng,
            sweeps: 0,
        }
    }

    pub fn proposal_sd(&self) -> f64 {
        self.sd
    }

    pub fn set_proposal_sd(&mut self, sd: f64) {
        self.sd = sd;
    }

    pub fn into_rng(self) -> SimRng {
        self.rng
    }

    /// One systematic-scan sweep; returns the number of accepted blocks.
    pub fn sweep(&mut self, state: &mut ChainState) -> usize {
        let post = self.posterior;
        let n = post.n_cells();
        if self.sweeps.is_multiple_of(REFRESH_EVERY) {
            state.refresh(post);
        }
        self.sweeps += 1;
        let beta = post.theta.beta;
        let q = post.precision.as_slice();
        let with_pp = post.n_obs > 0.0;
        let mut moved = 0;
        for (bi, block) in self.blocks.iter().enumerate() {
            let len = block.len();
            for a in 0..len {
                let z: f64 = self.rng.sample(StandardNormal);
                self.proposal[a] = state.s[block.start + a] + self.sd * z;
            }
            let delta = post.block_delta(
                &state.s,
                &self.proposal[..len],
                block.clone(),
                &state.rs[block.clone()],
                &state.e[block.clone()],
                (state.intensity_sum, state.shift),
                &mut self.proposal_e[..len],
            );
            let u: f64 = self.rng.random();
            if delta.is_finite() && (delta >= 0.0 || u.ln() < delta) {
                let mut high = f64::NEG_INFINITY;
                for a in 0..len {
                    let j = block.start + a;
                    let d = self.proposal[a] - state.s[j];
                    if d == 0.0 {
                        continue;
                    }
                    let col = &q[j * n..(j + 1) * n];
                    for (r, qv) in state.rs.iter_mut().zip(col) {
                        *r += qv * d;
                    }
                    if with_pp {
                        state.intensity_sum += self.proposal_e[a] - state.e[j];
                        state.e[j] = self.proposal_e[a];
                        high = high.max(beta * self.proposal[a]);
                    }
                    state.s[j] = self.proposal[a];
                }
                state.log_density += delta;
                if with_pp && (high - state.shift > 600.0 || !(state.intensity_sum > 0.0)) {
                    state.refresh_intensity(post);
                }
                self.accepted[bi] += 1;
                moved += 1;
            }
        }
        moved
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_acceptance(&self) -> Vec<f64> {
        let sweeps = self.sweeps.max(1) as f64;
        self.accepted.iter().map(|&a| a as f64 / sweeps).collect()
    }
}

/// Tunes `δ` from the acceptance of the last batch of sweeps.
fn adapt_sd(sd: f64, batch_rate: f64) -> f64 {
    if batch_rate < 0.2 {
        sd * 0.8
    } else if batch_rate > 0.4 {
        sd * 1.25
    } else {
        sd
    }
}

const ADAPT_BATCH: usize = 10;
const STALL_SWEEPS: usize = 100;

/// Runs the blocked sampler from `init`, recording every sweep.
pub fn run_chain(
    posterior: &Posterior,
    init: Vec<f64>,
    cfg: &MhConfig,
    rng: SimRng,
) -> Result<(Chain, ChainState, SimRng)> {
    cfg.validate(posterior.n_cells())?;
    if init.len() != posterior.n_cells() {
        return Err(Error::Dimension("initial state does not match the grid".into()));
    }
    let mut state = ChainState::new(posterior, init);
    let mut sampler = BlockSampler::new(posterior, cfg.block_size, cfg.resolved_sd(posterior.theta.sigma2), rng);
    let nb = sampler.n_blocks() as f64;
    let mut samples = Vec::with_capacity(cfg.iterations);
    let mut log_density = Vec::with_capacity(cfg.iterations);
    let mut sweep_acceptance = Vec::with_capacity(cfg.iterations);
    let mut batch = 0usize;
    let mut idle = 0usize;
    let mut stalled = false;
    for it in 0..cfg.iterations {
        let moved = sampler.sweep(&mut state);
        batch += moved;
        idle = if moved == 0 { idle + 1 } else { 0 };
        stalled |= idle >= STALL_SWEEPS;
        if cfg.adapt && it < cfg.burn_in && (it + 1) % ADAPT_BATCH == 0 {
            let rate = batch as f64 / (ADAPT_BATCH as f64 * nb);
            sampler.set_proposal_sd(adapt_sd(sampler.proposal_sd(), rate));
            batch = 0;
        }
        let ld = state.log_density();
        if !ld.is_finite() {
            return Err(Error::Numerical(format!("log-density became non-finite at sweep {it}")));
        }
        log_density.push(ld);
        sweep_acceptance.push(moved as f64 / nb);
        samples.push(state.field());
    }
    let chain = Chain {
        samples,
        log_density,
        acceptance_rate: sampler.block_acceptance(),
        sweep_acceptance,
        proposal_sd: sampler.proposal_sd(),
        stalled,
    };
    let rng = sampler.into_rng();
    Ok((chain, state, rng))
}

/// Samples `S | X, Y` from independent standard-normal initial values.
pub fn sample_predictive(
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    theta: &Params,
    cfg: &MhConfig,
) -> Result<Chain> {
    cfg.validate(grid.len())?;
    let posterior = Posterior::new(theta, data, grid)?;
    let mut rng = rng_from_seed(cfg.seed);
    let init: Vec<f64> = (0..grid.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let (chain, _, _) = run_chain(&posterior, init, cfg, rng)?;
    Ok(chain)
}

/// Coordinatewise mean of the states after `burn_in`.
pub fn predict_s(chain: &Chain, burn_in: usize) -> Result<LatentField> {
    if burn_in >= chain.samples.len() {
        return Err(Error::Config(format!(
            "burn-in {burn_in} leaves no samples out of {}",
            chain.samples.len()
        )));
    }
    let kept = &chain.samples[burn_in..];
    let n = kept[0].len();
    let mut mean = vec![0.0; n];
    for s in kept {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    let k = kept.len() as f64;
    LatentField::new(mean.into_iter().map(|m| m / k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::correlation_matrix;
    use crate::grid::Point;
    use rand::SeedableRng;

    fn instance(beta: f64, seed: u64) -> (SpatialGrid, PreferentialDataset, Params) {
        let grid = SpatialGrid::unit_square(4, 4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point> = (0..9).map(|_| [rng.random(), rng.random()]).collect();
        let y: Vec<f64> = (0..9).map(|_| rng.random_range(2.0..6.0)).collect();
        let data = PreferentialDataset::new(pts, y, &grid).unwrap();
        (grid, data, Params::new(4.0, 0.3, 1.2, 0.25, beta).unwrap())
    }

    /// Independent transcription of the posterior kernel with an explicit inverse.
    fn full_density(theta: &Params, data: &PreferentialDataset, grid: &SpatialGrid, s: &[f64]) -> f64 {
        let r = correlation_matrix(grid.centroids(), theta.phi).unwrap();
        let inv = r.try_inverse().unwrap();
        let sv = nalgebra::DVector::from_column_slice(s);
        let quad = (sv.transpose() * inv * &sv)[(0, 0)];
        let meas: f64 = data
            .y()
            .iter()
            .zip(&data.binning().cell_of)
            .map(|(y, &c)| (y - theta.mu - s[c]).powi(2))
            .sum();
        let linear: f64 = data.binning().cell_of.iter().map(|&c| s[c]).sum();
        let norm: f64 = s.iter().map(|v| grid.cell_area() * (theta.beta * v).exp()).sum();
        -meas / (2.0 * theta.tau2) + theta.beta * linear - data.len() as f64 * norm.ln() - quad / (2.0 * theta.sigma2)
    }

    #[test]
    fn partitions() {
        assert_eq!(block_partition(225, 1).len(), 225);
        let p = block_partition(225, 10);
        assert_eq!(p.len(), 23);
        assert_eq!(p[22].len(), 5);
        assert_eq!(block_partition(900, 15).len(), 60);
        let covered: usize = p.iter().map(|b| b.len()).sum();
        assert_eq!(covered, 225);
    }

    #[test]
    fn identical_proposal_has_zero_ratio() {
        let (grid, data, theta) = instance(1.5, 1);
        let post = Posterior::new(&theta, &data, &grid).unwrap();
        let s = LatentField::new((0..16).map(|j| (j as f64 * 0.3).sin()).collect()).unwrap();
        assert_eq!(block_log_acceptance(&s, &s, &post).unwrap(), 0.0);
    }

    #[test]
    fn block_ratio_matches_full_density() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            let (grid, data, theta) = instance(rng.random_range(-3.0..3.0), trial);
            let post = Posterior::new(&theta, &data, &grid).unwrap();
            let cur: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
            let start = rng.random_range(0..12);
            let len = rng.random_range(1..=4);
            let mut prop = cur.clone();
            for v in &mut prop[start..start + len] {
                *v += rng.random_range(-1.0..1.0);
            }
            let got = block_log_acceptance(
                &LatentField::new(cur.clone()).unwrap(),
                &LatentField::new(prop.clone()).unwrap(),
                &post,
            )
            .unwrap();
            let expect = full_density(&theta, &data, &grid, &prop) - full_density(&theta, &data, &grid, &cur);
            assert!((got - expect).abs() < 1e-8, "trial {trial}: {got} vs {expect}");
        }
    }

    #[test]
    fn prior_only_limit() {
        let (grid, data, theta) = instance(0.0, 4);
        let theta = Params { tau2: 1e6, ..theta };
        let post = Posterior::new(&theta, &data, &grid).unwrap();
        let cur: Vec<f64> = (0..16).map(|j| (j as f64).cos()).collect();
        let mut prop = cur.clone();
        prop[5] += 0.4;
        prop[6] -= 0.2;
        let got = block_log_acceptance(
            &LatentField::new(cur.clone()).unwrap(),
            &LatentField::new(prop.clone()).unwrap(),
            &post,
        )
        .unwrap();
        let f = Factor::new(correlation_matrix(grid.centroids(), theta.phi).unwrap()).unwrap();
        let qf = |s: &[f64]| f.quad_form(&nalgebra::DVector::from_column_slice(s));
        let prior = -(qf(&prop) - qf(&cur)) / (2.0 * theta.sigma2);
        assert!((got - prior).abs() < 1e-4);
    }

    #[test]
    fn detailed_balance_symmetry() {
        let (grid, data, theta) = instance(1.0, 9);
        let post = Posterior::new(&theta, &data, &grid).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let a: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut b = a.clone();
            for v in &mut b[4..8] {
                *v += rng.random_range(-0.5..0.5);
            }
            let (fa, fb) = (
                LatentField::new(a.clone()).unwrap(),
                LatentField::new(b.clone()).unwrap(),
            );
            let ab = block_log_acceptance(&fa, &fb, &post).unwrap().min(0.0) + post.log_density(&a);
            let ba = block_log_acceptance(&fb, &fa, &post).unwrap().min(0.0) + post.log_density(&b);
            // Symmetric proposal: q(b|a) = q(a|b) cancels.
            assert!((ab - ba).abs() < 1e-8);
        }
    }

    #[test]
    fn chains_are_reproducible() {
        let (grid, data, theta) = instance(1.0, 2);
        let cfg = MhConfig {
            block_size: 3,
            iterations: 60,
            burn_in: 10,
            seed: 5,
            ..Default::default()
        };
        let a = sample_predictive(&data, &grid, &theta, &cfg).unwrap();
        let b = sample_predictive(&data, &grid, &theta, &cfg).unwrap();
        assert_eq!(a, b);
        let c = sample_predictive(&data, &grid, &theta, &MhConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn cached_log_density_tracks_full_evaluation() {
        let (grid, data, theta) = instance(2.0, 3);
        let post = Posterior::new(&theta, &data, &grid).unwrap();
        let cfg = MhConfig {
            block_size: 2,
            iterations: 120,
            burn_in: 0,
            seed: 1,
            ..Default::default()
        };
        let (chain, _, _) = run_chain(&post, vec![0.0; 16], &cfg, rng_from_seed(3)).unwrap();
        for (s, ld) in chain.samples.iter().zip(&chain.log_density) {
            assert!((post.log_density(s.values()) - ld).abs() < 1e-8);
        }
    }

    #[test]
    fn prior_variance_recovered_without_data() {
        let grid = SpatialGrid::unit_square(3, 3).unwrap();
        let data = PreferentialDataset::empty(&grid);
        let theta = Params::new(0.0, 0.1, 0.8, 0.2, 0.0).unwrap();
        let cfg = MhConfig {
            block_size: 1,
            proposal_sd: Some(0.9),
            iterations: 40_000,
            burn_in: 1000,
            seed: 17,
            adapt: false,
        };
        let chain = sample_predictive(&data, &grid, &theta, &cfg).unwrap();
        let kept = &chain.samples[cfg.burn_in..];
        for j in 0..9 {
            let xs: Vec<f64> = kept.iter().map(|s| s.values()[j]).collect();
            let (m, v, se_v) = mean_var_batch(&xs, 50);
            assert!(m.abs() < 0.15, "cell {j} mean {m}");
            assert!((v - theta.sigma2).abs() < 3.0 * se_v, "cell {j}: var {v} ± {se_v}");
        }
    }

    /// Mean, variance and batch-means standard error of the variance.
    fn mean_var_batch(xs: &[f64], batches: usize) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let size = xs.len() / batches;
        let bv: Vec<f64> = xs
            .chunks(size)
            .take(batches)
            .map(|c| c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / c.len() as f64)
            .collect();
        let bm = bv.iter().sum::<f64>() / batches as f64;
        let var_b = bv.iter().map(|x| (x - bm).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
        (m, v, (var_b / batches as f64).sqrt())
    }

    #[test]
    fn predict_s_averages_states() {
        let f = |v: Vec<f64>| LatentField::new(v).unwrap();
        let chain = Chain {
            samples: vec![f(vec![9.0, 9.0]), f(vec![1.0, -1.0]), f(vec![3.0, 1.0])],
            log_density: vec![0.0; 3],
            acceptance_rate: vec![],
            sweep_acceptance: vec![],
            proposal_sd: 1.0,
            stalled: false,
        };
        assert_eq!(predict_s(&chain, 1).unwrap().values(), &[2.0, 0.0]);
        assert!(predict_s(&chain, 3).is_err());
        let constant = Chain {
            samples: vec![f(vec![0.5, 0.25]); 4],
            ..chain
        };
        assert_eq!(predict_s(&constant, 0).unwrap().values(), &[0.5, 0.25]);
    }

    #[test]
    fn config_validation() {
        assert!(MhConfig {
            block_size: 0,
            ..Default::default()
        }
        .validate(10)
        .is_err());
        assert!(MhConfig {
            block_size: 11,
            ..Default::default()
        }
        .validate(10)
        .is_err());
        assert!(MhConfig {
            burn_in: 300,
            ..Default::default()
        }
        .validate(10)
        .is_err());
        assert!(MhConfig {
            proposal_sd: Some(0.0),
            ..Default::default()
        }
        .validate(10)
        .is_err());
    }

    #[test]
    fn adaptation_moves_towards_target() {
        assert!(adapt_sd(1.0, 0.05) < 1.0);
        assert!(adapt_sd(1.0, 0.9) > 1.0);
        assert_eq!(adapt_sd(1.0, 0.3), 1.0);
    }
}
