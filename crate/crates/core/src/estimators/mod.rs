//! Parameter estimation: non-preferential ML, Monte Carlo likelihood,
//! Laplace approximation and the stochastic EM family.

pub mod em;
pub mod laplace;
pub mod mcla;
pub mod npg;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{kernel_matrix, Exponential, Factor, Params};
use crate::grid::SpatialGrid;
use crate::point_process::PreferentialDataset;

pub use em::{e_step_update, fit_em, m_step, memory_free_iterations, saem_weight, EmConfig, EmVariant};
pub use laplace::{fit_laplace, laplace_mode_and_hessian, laplace_objective, laplace_standard_errors, LaplaceMode};
pub use mcla::{fit_mcla, mcla_objective};
pub use npg::fit_npg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Npg,
    Mcla,
    Laplace,
    Mcem,
    Saem,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Npg,
        Estimator::Mcla,
        Estimator::Laplace,
        Estimator::Mcem,
        Estimator::Saem,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Npg => "npg",
            Estimator::Mcla => "mcla",
            Estimator::Laplace => "laplace",
            Estimator::Mcem => "mcem",
            Estimator::Saem => "saem",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown estimator '{s}' (expected npg, mcla, laplace, mcem or saem)"
                ))
            })
    }
}

/// One row of an estimation trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub theta: Params,
    /// Value of the estimator's objective (EM: complete log-likelihood at the
    /// accumulator means).
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub estimator: Estimator,
    pub theta_hat: Params,
    /// False when the estimator has no `β` (NPG); `theta_hat.beta` is then 0.
    pub beta_estimated: bool,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub reason: String,
    pub elapsed: f64,
    pub seed: u64,
    pub objective: f64,
    pub evaluations: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Approximate standard errors of `(μ, τ², σ², φ, β)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<[f64; 5]>,
}

impl FitReport {
    /// Copy without wall-clock information, for reproducibility comparisons.
    pub fn without_timing(&self) -> FitReport {
        FitReport {
            elapsed: 0.0,
            ..self.clone()
        }
    }
}

/// Settings shared by the likelihood-maximizing estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Hold `φ` at this value instead of estimating it.
    pub fix_phi: Option<f64>,
    pub max_evals: usize,
    /// Convergence tolerance of the simplex on the transformed scale.
    pub x_tol: f64,
    pub f_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            fix_phi: None,
            max_evals: 3000,
            x_tol: 1e-6,
            f_tol: 1e-10,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(phi) = self.fix_phi {
            if !(phi > 0.0) || !phi.is_finite() {
                return Err(Error::Config(format!("fixed phi must be > 0, got {phi}")));
            }
        }
        if self.max_evals == 0 || !(self.x_tol > 0.0) || !(self.f_tol > 0.0) {
            return Err(Error::Config("optimizer limits must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn nelder_mead(&self) -> crate::optimize::NelderMeadOptions {
        crate::optimize::NelderMeadOptions {
            max_evals: self.max_evals,
            x_tol: self.x_tol,
            f_tol: self.f_tol,
            ..Default::default()
        }
    }
}

/// Box used by every optimizer, on the transformed scale
/// `(μ, log τ², log σ², log φ, β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBox {
    pub mu: (f64, f64),
    pub log_tau2: (f64, f64),
    pub log_sigma2: (f64, f64),
    pub log_phi: (f64, f64),
    pub beta: (f64, f64),
}

impl ParamBox {
    pub fn new(data: &PreferentialDataset, diameter: f64) -> Self {
        let y = data.y();
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sd = data.sd_y();
        let spread = if sd > 0.0 { 10.0 * sd } else { 10.0 * lo.abs().max(1.0) };
        let diameter = if diameter > 0.0 { diameter } else { 1.0 };
        ParamBox {
            mu: (lo - spread, hi + spread),
            log_tau2: (-12.0, 6.0),
            log_sigma2: (-12.0, 6.0),
            log_phi: ((diameter / 1000.0).ln(), diameter.ln()),
            beta: (-20.0, 20.0),
        }
    }

    pub fn for_grid(data: &PreferentialDataset, grid: &SpatialGrid) -> Self {
        Self::new(data, grid.region().diameter())
    }

    pub fn clamp_theta(&self, theta: &Params) -> Params {
        let c = |v: f64, (l, u): (f64, f64)| v.clamp(l, u);
        Params {
            mu: c(theta.mu, self.mu),
            tau2: c(theta.tau2.max(f64::MIN_POSITIVE).ln(), self.log_tau2).exp(),
            sigma2: c(theta.sigma2.ln(), self.log_sigma2).exp(),
            phi: c(theta.phi.ln(), self.log_phi).exp(),
            beta: c(theta.beta, self.beta),
        }
    }
}

/// Which coordinates of `(μ, log τ², log σ², log φ, β)` are free.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub fix_phi: Option<f64>,
    pub with_beta: bool,
}

impl Layout {
    fn slots(&self) -> Vec<usize> {
        let mut v = vec![0, 1, 2];
        if self.fix_phi.is_none() {
            v.push(3);
        }
        if self.with_beta {
            v.push(4);
        }
        v
    }

    pub fn bounds(&self, b: &ParamBox) -> crate::optimize::Bounds {
        let all = [b.mu, b.log_tau2, b.log_sigma2, b.log_phi, b.beta];
        let slots = self.slots();
        crate::optimize::Bounds::new(
            slots.iter().map(|&i| all[i].0).collect(),
            slots.iter().map(|&i| all[i].1).collect(),
        )
    }

    pub fn encode(&self, theta: &Params) -> Vec<f64> {
        let all = [theta.mu, theta.tau2.ln(), theta.sigma2.ln(), theta.phi.ln(), theta.beta];
        self.slots().iter().map(|&i| all[i]).collect()
    }

    pub fn decode(&self, x: &[f64]) -> Params {
        let mut all = [0.0, 0.0, 0.0, 0.0, 0.0];
        for (&i, &v) in self.slots().iter().zip(x) {
            all[i] = v;
        }
        Params {
            mu: all[0],
            tau2: all[1].exp(),
            sigma2: all[2].exp(),
            phi: self.fix_phi.unwrap_or_else(|| all[3].exp()),
            beta: if self.with_beta { all[4] } else { 0.0 },
        }
    }
}

/// Correlation factor and precision of the grid, rebuilt only when `φ` moves.
#[derive(Debug, Default)]
pub(crate) struct CorrelationCache {
    entry: Option<(f64, Factor, Option<DMatrix<f64>>)>,
}

impl CorrelationCache {
    pub fn factor(&mut self, grid: &SpatialGrid, phi: f64) -> Result<&Factor> {
        self.ensure(grid, phi)?;
        Ok(&self.entry.as_ref().expect("cache filled").1)
    }

    fn ensure(&mut self, grid: &SpatialGrid, phi: f64) -> Result<()> {
        let stale = match &self.entry {
            Some((p, _, _)) => *p != phi,
            None => true,
        };
        if stale {
            let r = kernel_matrix(grid.centroids(), &Exponential::new(phi)?);
            self.entry = Some((phi, Factor::new(r)?, None));
        }
        Ok(())
    }

    /// Factor and symmetrized inverse of `R(φ)`.
    pub fn both(&mut self, grid: &SpatialGrid, phi: f64) -> Result<(&Factor, &DMatrix<f64>)> {
        self.ensure(grid, phi)?;
        let entry = self.entry.as_mut().expect("cache filled");
        if entry.2.is_none() {
            let inv = entry.1.inverse();
            let n = inv.nrows();
            entry.2 = Some(DMatrix::from_fn(n, n, |i, j| 0.5 * (inv[(i, j)] + inv[(j, i)])));
        }
        Ok((&entry.1, entry.2.as_ref().expect("precision filled")))
    }
}

/// Starting point used when no initial values are supplied: the NPG fit for
/// `(μ, τ², σ², φ)` and `β = 0`.
pub fn default_init(data: &PreferentialDataset, grid: &SpatialGrid, opts: &FitOptions) -> Result<Params> {
    let start = moment_init(data, grid);
    let npg = fit_npg(data, &start, opts)?;
    let mut theta = npg.theta_hat;
    theta.beta = 0.0;
    if let Some(phi) = opts.fix_phi {
        theta.phi = phi;
    }
    Ok(ParamBox::for_grid(data, grid).clamp_theta(&theta))
}

/// Crude moment-based values: half the sample variance to each of the nugget
/// and the field, range a tenth of the region diameter.
pub fn moment_init(data: &PreferentialDataset, grid: &SpatialGrid) -> Params {
    let var = data.sd_y().powi(2).max(1e-4);
    Params {
        mu: data.mean_y(),
        tau2: 0.5 * var,
        sigma2: 0.5 * var,
        phi: 0.1 * grid.region().diameter(),
        beta: 0.0,
    }
}

/// Settings for [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    pub options: FitOptions,
    pub em: EmConfig,
    /// Importance draws for MCLA.
    pub mcla_draws: usize,
    /// Compute approximate standard errors from the Laplace objective.
    pub std_errors: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            options: FitOptions::default(),
            em: EmConfig::default(),
            mcla_draws: 100,
            std_errors: false,
        }
    }
}

/// Runs the chosen estimator.
pub fn fit(
    estimator: Estimator,
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    init: &Params,
    settings: &FitSettings,
    seed: u64,
) -> Result<FitReport> {
    let mut em = settings.em.clone();
    if em.fix_phi.is_none() {
        em.fix_phi = settings.options.fix_phi;
    }
    let mut report = match estimator {
        Estimator::Npg => fit_npg(data, init, &settings.options)?,
        Estimator::Mcla => fit_mcla(data, grid, settings.mcla_draws, init, seed, &settings.options)?,
        Estimator::Laplace => fit_laplace(data, grid, init, &settings.options)?,
        Estimator::Mcem => fit_em(data, grid, init, &em, seed, EmVariant::Mcem)?,
        Estimator::Saem => fit_em(data, grid, init, &em, seed, EmVariant::Saem)?,
    };
    report.seed = seed;
    if settings.std_errors && report.beta_estimated {
        match laplace_standard_errors(&report.theta_hat, data, grid, settings.options.fix_phi) {
            Ok(se) => report.std_errors = Some(se),
            Err(e) => report.warnings.push(format!("standard errors unavailable: {e}")),
        }
    }
    Ok(report)
}

/// Objective-recording wrapper for the simplex runs.
pub(crate) struct Recorder {
    pub trace: Vec<TraceEntry>,
    best: f64,
    evals: usize,
}

impl Recorder {
    pub fn new() -> Self {
        Recorder {
            trace: Vec::new(),
            best: f64::NEG_INFINITY,
            evals: 0,
        }
    }

    /// Records `theta` when `value` improves on the best so far.
    pub fn observe(&mut self, theta: &Params, value: f64) {
        self.evals += 1;
        if value.is_finite() && value > self.best {
            self.best = value;
            self.trace.push(TraceEntry {
                iteration: self.evals,
                theta: *theta,
                objective: value,
            });
        }
    }

    pub fn evals(&self) -> usize {
        self.evals
    }

    /// Makes sure the trace ends at the reported estimate.
    pub fn finish(&mut self, theta: &Params, value: f64) {
        let matches = self.trace.last().map(|t| t.theta == *theta).unwrap_or(false);
        if !matches {
            self.trace.push(TraceEntry {
                iteration: self.evals,
                theta: *theta,
                objective: value,
            });
        }
    }
}

/// Diameter of the bounding box of the observation locations.
pub(crate) fn location_diameter(data: &PreferentialDataset) -> f64 {
    let pts = data.locations();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
}
