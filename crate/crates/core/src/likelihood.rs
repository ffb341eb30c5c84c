//! Log-density kernels of the preferential model.
//!
//! All densities keep their normalizing constants so objective values are
//! comparable across parameter values and across estimators.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{kernel_matrix, Exponential, Factor, GeoParams, LatentField, Params};
use crate::grid::SpatialGrid;
use crate::point_process::{log_f_x_given_s, PreferentialDataset};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("{what} is not finite")))
    }
}

/// `Σ_i log N(y_i; μ + s(x_i), τ²)`.
pub fn log_f_y_given_xs(y: &[f64], s_at_obs: &[f64], mu: f64, tau2: f64) -> Result<f64> {
    if !(tau2 > 0.0) {
        return Err(Error::ParamDomain(format!(
            "measurement density needs tau2 > 0, got {tau2}"
        )));
    }
    if y.len() != s_at_obs.len() {
        return Err(Error::Dimension(format!(
            "{} responses but {} field values",
            y.len(),
            s_at_obs.len()
        )));
    }
    let n = y.len() as f64;
    let rss: f64 = y.iter().zip(s_at_obs).map(|(yi, si)| (yi - mu - si).powi(2)).sum();
    finite(-0.5 * n * (LN_2PI + tau2.ln()) - 0.5 * rss / tau2, "log f(y|x,s)")
}

/// Gaussian log-density of `s` under `N(0, σ² R)` given the factor of `R`.
pub fn log_f_s(s: &LatentField, sigma2: f64, r_factor: &Factor) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::ParamDomain(format!("sigma2 must be > 0, got {sigma2}")));
    }
    if s.len() != r_factor.dim() {
        return Err(Error::Dimension(format!(
            "field has {} values, correlation matrix is {}x{}",
            s.len(),
            r_factor.dim(),
            r_factor.dim()
        )));
    }
    let big_n = s.len() as f64;
    let quad = r_factor.quad_form(&s.to_dvector());
    finite(
        -0.5 * big_n * (LN_2PI + sigma2.ln()) - 0.5 * r_factor.log_det() - 0.5 * quad / sigma2,
        "log f(s)",
    )
}

/// Field values at the cells of the observations.
pub fn field_at_observations(s: &LatentField, data: &PreferentialDataset) -> Vec<f64> {
    data.binning().cell_of.iter().map(|&c| s.values()[c]).collect()
}

/// Complete-data log-likelihood `log f(y|x,s) + log f(x|s) + log f(s)`.
pub fn complete_loglik(
    theta: &Params,
    s: &LatentField,
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    r_factor: &Factor,
) -> Result<f64> {
    theta.validate()?;
    data.check_grid(grid)?;
    let s_obs = field_at_observations(s, data);
    let ly = log_f_y_given_xs(data.y(), &s_obs, theta.mu, theta.tau2)?;
    let lx = log_f_x_given_s(data.binning(), s, theta.beta, grid)?;
    let ls = log_f_s(s, theta.sigma2, r_factor)?;
    Ok(ly + lx + ls)
}

/// Marginal log-likelihood of `y` ignoring the sampling design:
/// `y ~ N(μ1, τ²I + σ²R(φ))` with distances between the raw locations.
pub fn nonpref_marginal_loglik(theta: &GeoParams, data: &PreferentialDataset) -> Result<f64> {
    theta.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::InsufficientData("no observations".into()));
    }
    let mut cov = kernel_matrix(data.locations(), &Exponential::new(theta.phi)?) * theta.sigma2;
    for i in 0..n {
        cov[(i, i)] += theta.tau2;
    }
    let factor = Factor::new(cov)?;
    let resid = DVector::from_iterator(n, data.y().iter().map(|v| v - theta.mu));
    finite(
        -0.5 * (n as f64 * LN_2PI + factor.log_det() + factor.quad_form(&resid)),
        "marginal log-likelihood",
    )
}

/// Tabulated `β ↦ log Σ_j Δ exp(β s_j)` with its derivative, averaged over
/// draws; evaluated between nodes by cubic Hermite interpolation.
///
/// The stochastic-approximation recursion is linear in this function, so it
/// can be applied node-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogNormCurve {
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl LogNormCurve {
    pub const BETA_MIN: f64 = -20.0;
    pub const BETA_MAX: f64 = 20.0;
    const STEP: f64 = 0.1;
    const HALF: usize = 200;

    fn nodes() -> usize {
        2 * Self::HALF + 1
    }

    fn beta_at(k: usize) -> f64 {
        (k as f64 - Self::HALF as f64) * Self::STEP
    }

    /// Curve of a single draw.
    pub fn from_draw(s: &[f64], cell_area: f64) -> Self {
        let nodes = Self::nodes();
        let mut values = vec![0.0; nodes];
        let mut slopes = vec![0.0; nodes];
        let ln_area = cell_area.ln();
        let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
        // β ≥ 0 with the shift at max(s), β ≤ 0 with the shift at min(s); all
        // terms t_j = exp(β (s_j − s*)) stay in (0, 1].
        for (anchor, dir) in [(hi, 1.0f64), (lo, -1.0f64)] {
            let step: Vec<f64> = s.iter().map(|&v| (dir * Self::STEP * (v - anchor)).exp()).collect();
            let mut t = vec![1.0; s.len()];
            for m in 0..=Self::HALF {
                let k = if dir > 0.0 { Self::HALF + m } else { Self::HALF - m };
                if m > 0 {
                    for (tj, sj) in t.iter_mut().zip(&step) {
                        *tj *= sj;
                    }
                }
                let (mut tot, mut first) = (0.0, 0.0);
                for (tj, &v) in t.iter().zip(s) {
                    tot += tj;
                    first += tj * v;
                }
                let beta = Self::beta_at(k);
                values[k] = ln_area + beta * anchor + tot.ln();
                slopes[k] = first / tot;
            }
        }
        LogNormCurve { values, slopes }
    }

    /// Average curve of several draws.
    pub fn from_draws(draws: &[LatentField], cell_area: f64) -> Self {
        let mut acc = LogNormCurve {
            values: vec![0.0; Self::nodes()],
            slopes: vec![0.0; Self::nodes()],
        };
        let w = 1.0 / draws.len() as f64;
        for d in draws {
            let c = Self::from_draw(d.values(), cell_area);
            acc.blend_in(&c, w);
        }
        acc
    }

    fn blend_in(&mut self, other: &LogNormCurve, w: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += w * b;
        }
        for (a, b) in self.slopes.iter_mut().zip(&other.slopes) {
            *a += w * b;
        }
    }

    /// `γ · new + (1 − γ) · self`.
    pub fn convex_update(&self, new: &LogNormCurve, gamma: f64) -> Self {
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter()
                .zip(b)
                .map(|(old, fresh)| gamma * fresh + (1.0 - gamma) * old)
                .collect()
        };
        LogNormCurve {
            values: mix(&self.values, &new.values),
            slopes: mix(&self.slopes, &new.slopes),
        }
    }

    pub fn eval(&self, beta: f64) -> f64 {
        let b = beta.clamp(Self::BETA_MIN, Self::BETA_MAX);
        let pos = (b - Self::BETA_MIN) / Self::STEP;
        let k = (pos.floor() as usize).min(Self::nodes() - 2);
        let t = pos - k as f64;
        let h = Self::STEP;
        let (p0, p1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * p1 + (t3 - t2) * m1
    }
}

/// Stochastic-approximation accumulators of the E-step.
///
/// The terms that depend on `(μ, τ²)` are kept as first and second moments of
/// `S(x_i)`, so the residual term is exact for any `μ`. The newest iteration's
/// draws are retained so the quadratic-form and log-normalizer terms can be
/// evaluated exactly for candidate `(φ, β)`; older iterations enter through
/// `quad_history` (evaluated at their own `φ`) and `log_norm_history`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    /// SA mean of `S_j` for every cell.
    pub s_mean: Vec<f64>,
    /// SA mean of `S(x_i)²` for every observation.
    pub s2_obs: Vec<f64>,
    /// SA value of `log Σ Δ exp(β S_j)` at the `β` of the latest E-step.
    pub log_norm: f64,
    /// SA value of `S′R⁻¹S` at the `φ` of the latest E-step.
    pub quad: f64,
    /// Weight `γ_k` of the latest update.
    pub gamma: f64,
    /// Draws of the latest E-step.
    pub draws: Vec<LatentField>,
    /// Accumulated `S′R⁻¹S` before the latest update.
    pub quad_history: f64,
    /// Accumulated log-normalizer curve before the latest update.
    pub log_norm_history: Option<LogNormCurve>,
    /// Accumulated log-normalizer curve including the latest update.
    pub log_norm_curve: Option<LogNormCurve>,
}

impl SufficientStats {
    pub fn n_cells(&self) -> usize {
        self.s_mean.len()
    }

    /// SA mean of `S(x_i)` for every observation.
    pub fn s_obs(&self, data: &PreferentialDataset) -> Vec<f64> {
        data.binning().cell_of.iter().map(|&c| self.s_mean[c]).collect()
    }

    /// SA value of `Σ_i (y_i − μ − S(x_i))²` as a function of `μ`.
    pub fn rss(&self, data: &PreferentialDataset, mu: f64) -> f64 {
        data.y()
            .iter()
            .zip(self.s_obs(data))
            .zip(&self.s2_obs)
            .map(|((&y, s1), &s2)| (y - mu).powi(2) - 2.0 * (y - mu) * s1 + s2)
            .sum()
    }

    /// SA log-normalizer at `β`, exact in the newest draws.
    pub fn log_norm_at(&self, beta: f64, cell_area: f64) -> f64 {
        let fresh = self
            .draws
            .iter()
            .map(|d| crate::point_process::log_normalizer(d.values(), beta, cell_area))
            .sum::<f64>()
            / self.draws.len() as f64;
        match (&self.log_norm_history, self.gamma < 1.0) {
            (Some(hist), true) => self.gamma * fresh + (1.0 - self.gamma) * hist.eval(beta),
            _ => fresh,
        }
    }

    /// SA quadratic form at a candidate `φ`, exact in the newest draws.
    pub fn quad_at(&self, r_factor: &Factor) -> f64 {
        let fresh = self
            .draws
            .iter()
            .map(|d| r_factor.quad_form(&d.to_dvector()))
            .sum::<f64>()
            / self.draws.len() as f64;
        if self.gamma < 1.0 {
            self.gamma * fresh + (1.0 - self.gamma) * self.quad_history
        } else {
            fresh
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = self.s_mean.iter().chain(&self.s2_obs).all(|v| v.is_finite())
            && self.log_norm.is_finite()
            && self.quad.is_finite()
            && self.quad_history.is_finite();
        if !ok {
            return Err(Error::Numerical("sufficient statistics are not finite".into()));
        }
        if self.quad < 0.0 || self.s2_obs.iter().any(|&v| v < 0.0) {
            return Err(Error::Numerical("negative second-moment accumulator".into()));
        }
        Ok(())
    }
}

/// Approximate `Q̂(θ)` from the accumulators, constants included.
pub fn q_hat(stats: &SufficientStats, theta: &Params, data: &PreferentialDataset, grid: &SpatialGrid) -> Result<f64> {
    theta.validate()?;
    if !(theta.tau2 > 0.0) {
        return Err(Error::ParamDomain("Q needs tau2 > 0".into()));
    }
    let r = kernel_matrix(grid.centroids(), &Exponential::new(theta.phi)?);
    let factor = Factor::new(r)?;
    q_hat_with_factor(stats, theta, data, grid, &factor)
}

pub(crate) fn q_hat_with_factor(
    stats: &SufficientStats,
    theta: &Params,
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    r_factor: &Factor,
) -> Result<f64> {
    let n = data.len() as f64;
    let big_n = grid.len() as f64;
    let meas = -0.5 * n * (LN_2PI + theta.tau2.ln()) - 0.5 * stats.rss(data, theta.mu) / theta.tau2;
    let linear: f64 = stats.s_obs(data).iter().sum();
    let pp = theta.beta * linear - n * stats.log_norm_at(theta.beta, grid.cell_area());
    let prior = -0.5 * big_n * (LN_2PI + theta.sigma2.ln())
        - 0.5 * r_factor.log_det()
        - 0.5 * stats.quad_at(r_factor) / theta.sigma2;
    finite(meas + pp + prior, "Q")
}
