//! Laplace approximation of the marginal likelihood of `(X, Y)`.
//!
//! For fixed `θ` the joint log-density `f(S) = log f(y, x, S)` is maximized
//! by damped Newton steps with the analytic gradient and Hessian:
//!
//! ```text
//! ∇f  = (b_j − n_j s_j)/τ² + β (n_j − n p_j) − (R⁻¹s)_j / σ²
//! −∇²f = diag(n_j/τ²) + n β² (diag p − p p′) + R⁻¹/σ²
//! ```
//!
//! with `b_j = Σ_{i∈j}(y_i − μ)` and `p_j ∝ exp(β s_j)`. The approximation is
//! `(N/2) log 2π − ½ log|−∇²f(ŝ)| + f(ŝ)`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{CorrelationCache, Estimator, FitOptions, FitReport, Layout, ParamBox, Recorder};
use crate::error::{Error, Result};
use crate::field::{Factor, LatentField, Params};
use crate::grid::SpatialGrid;
use crate::optimize::{nelder_mead, numerical_hessian};
use crate::point_process::PreferentialDataset;
use crate::predictor::Posterior;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const MAX_NEWTON: usize = 100;
const GRAD_TOL: f64 = 1e-9;

/// `log f(y, x, S; θ)` with its derivatives, for fixed `θ`.
pub struct JointDensity {
    posterior: Posterior,
    constant: f64,
}

impl JointDensity {
    pub fn new(theta: &Params, data: &PreferentialDataset, grid: &SpatialGrid) -> Result<Self> {
        let mut cache = CorrelationCache::default();
        Self::with_cache(theta, data, grid, &mut cache)
    }

    pub(crate) fn with_cache(
        theta: &Params,
        data: &PreferentialDataset,
        grid: &SpatialGrid,
        cache: &mut CorrelationCache,
    ) -> Result<Self> {
        theta.validate()?;
        let (factor, precision) = cache.both(grid, theta.phi)?;
        let log_det_r = factor.log_det();
        let posterior = Posterior::from_precision(theta, data, grid, precision.clone())?;
        Ok(Self::assemble(posterior, log_det_r, data.len(), grid.len()))
    }

    pub fn with_factor(
        theta: &Params,
        data: &PreferentialDataset,
        grid: &SpatialGrid,
        r_factor: &Factor,
    ) -> Result<Self> {
        let posterior = Posterior::with_factor(theta, data, grid, r_factor)?;
        Ok(Self::assemble(posterior, r_factor.log_det(), data.len(), grid.len()))
    }

    fn assemble(posterior: Posterior, log_det_r: f64, n: usize, big_n: usize) -> Self {
        let theta = posterior.theta;
        let meas = if n > 0 {
            -0.5 * n as f64 * (LN_2PI + theta.tau2.ln())
        } else {
            0.0
        };
        let prior = -0.5 * big_n as f64 * (LN_2PI + theta.sigma2.ln()) - 0.5 * log_det_r;
        JointDensity {
            posterior,
            constant: meas + prior,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.posterior.n_cells()
    }

    pub fn value(&self, s: &[f64]) -> f64 {
        self.posterior.log_density(s) + self.constant
    }

    fn probabilities(&self, s: &[f64]) -> Vec<f64> {
        let beta = self.posterior.theta.beta;
        let hi = s.iter().map(|&v| beta * v).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = s.iter().map(|&v| (beta * v - hi).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    pub fn gradient(&self, s: &[f64]) -> Vec<f64> {
        let p = &self.posterior;
        let theta = p.theta;
        let q = DVector::from_column_slice(s);
        let qs = &p.precision * q;
        let probs = self.probabilities(s);
        let w = 2.0 * p.meas_weight();
        (0..s.len())
            .map(|j| {
                w * (p.resid_sum[j] - p.counts[j] * s[j]) + theta.beta * (p.counts[j] - p.n_obs * probs[j])
                    - qs[j] / theta.sigma2
            })
            .collect()
    }

    /// `−∇²f(s)`.
    pub fn neg_hessian(&self, s: &[f64]) -> DMatrix<f64> {
        let p = &self.posterior;
        let theta = p.theta;
        let n = s.len();
        let mut h = &p.precision / theta.sigma2;
        let w = 2.0 * p.meas_weight();
        let scale = p.n_obs * theta.beta * theta.beta;
        let probs = self.probabilities(s);
        for j in 0..n {
            h[(j, j)] += w * p.counts[j];
            if scale > 0.0 {
                h[(j, j)] += scale * probs[j];
                for i in 0..n {
                    h[(i, j)] -= scale * probs[i] * probs[j];
                }
            }
        }
        h
    }

    /// Damped Newton ascent from `start`.
    pub fn mode_from(&self, start: Vec<f64>) -> Result<LaplaceMode> {
        let n = self.n_cells();
        if start.len() != n {
            return Err(Error::Dimension("start does not match the grid".into()));
        }
        let mut s = start;
        let mut f = self.value(&s);
        if !f.is_finite() {
            s = vec![0.0; n];
            f = self.value(&s);
        }
        let mut iterations = 0;
        loop {
            let g = self.gradient(&s);
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let h = self.neg_hessian(&s);
            if gmax < GRAD_TOL || iterations >= MAX_NEWTON {
                if gmax >= 1e-6 {
                    return Err(Error::Numerical(format!(
                        "Newton iterations for the mode stopped with gradient {gmax:e}"
                    )));
                }
                let factor = Factor::new(h.clone())?;
                return Ok(LaplaceMode {
                    log_det_neg_hessian: factor.log_det(),
                    mode: LatentField::new(s)?,
                    neg_hessian: h,
                    f_at_mode: f,
                    gradient_norm: gmax,
                    iterations,
                });
            }
            iterations += 1;
            let factor = Factor::new(h)?;
            let d = factor.solve(&DVector::from_vec(g.clone()));
            let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let trial: Vec<f64> = s.iter().zip(d.iter()).map(|(a, b)| a + t * b).collect();
                let ft = self.value(&trial);
                if ft.is_finite() && ft >= f + 1e-4 * t * slope {
                    s = trial;
                    f = ft;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                // At round-off level the objective no longer separates steps.
                let trial: Vec<f64> = s.iter().zip(d.iter()).map(|(a, b)| a + b).collect();
                let gt = self.gradient(&trial);
                let gtmax = gt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if gtmax < gmax {
                    f = self.value(&trial);
                    s = trial;
                } else if gmax < 1e-6 {
                    iterations = MAX_NEWTON;
                } else {
                    return Err(Error::Numerical(
                        "line search for the mode failed to increase the joint density".into(),
                    ));
                }
            }
        }
    }
}

/// Mode of `f(S, θ)` with the curvature there.
#[derive(Debug, Clone)]
pub struct LaplaceMode {
    pub mode: LatentField,
    /// `−∇²f` at the mode.
    pub neg_hessian: DMatrix<f64>,
    pub f_at_mode: f64,
    pub log_det_neg_hessian: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

impl LaplaceMode {
    pub fn objective(&self) -> f64 {
        let big_n = self.mode.len() as f64;
        0.5 * big_n * LN_2PI - 0.5 * self.log_det_neg_hessian + self.f_at_mode
    }
}

pub fn laplace_mode_and_hessian(theta: &Params, data: &PreferentialDataset, grid: &SpatialGrid) -> Result<LaplaceMode> {
    JointDensity::new(theta, data, grid)?.mode_from(vec![0.0; grid.len()])
}

/// Laplace log-likelihood at `θ`.
pub fn laplace_objective(theta: &Params, data: &PreferentialDataset, grid: &SpatialGrid) -> Result<f64> {
    Ok(laplace_mode_and_hessian(theta, data, grid)?.objective())
}

/// Evaluates the Laplace objective with a warm-started mode and cached `R`.
struct Evaluator<'a> {
    data: &'a PreferentialDataset,
    grid: &'a SpatialGrid,
    cache: CorrelationCache,
    last_mode: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(data: &'a PreferentialDataset, grid: &'a SpatialGrid) -> Self {
        Evaluator {
            data,
            grid,
            cache: CorrelationCache::default(),
            last_mode: vec![0.0; grid.len()],
        }
    }

    fn eval(&mut self, theta: &Params) -> f64 {
        let joint = match JointDensity::with_cache(theta, self.data, self.grid, &mut self.cache) {
            Ok(j) => j,
            Err(_) => return f64::NEG_INFINITY,
        };
        match joint.mode_from(self.last_mode.clone()) {
            Ok(m) => {
                let v = m.objective();
                if v.is_finite() {
                    self.last_mode = m.mode.into_values();
                }
                v
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

pub fn fit_laplace(
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    init: &Params,
    opts: &FitOptions,
) -> Result<FitReport> {
    opts.validate()?;
    if data.len() < 2 {
        return Err(Error::InsufficientData(
            "Laplace fit needs at least 2 observations".into(),
        ));
    }
    data.check_grid(grid)?;
    let start = Instant::now();
    let layout = Layout {
        fix_phi: opts.fix_phi,
        with_beta: true,
    };
    let boxes = ParamBox::for_grid(data, grid);
    let bounds = layout.bounds(&boxes);
    let x0 = layout.encode(&boxes.clamp_theta(init));
    let mut rec = Recorder::new();
    let mut ev = Evaluator::new(data, grid);
    let mut failures = 0usize;
    let min = nelder_mead(
        |x| {
            let theta = layout.decode(x);
            let v = ev.eval(&theta);
            failures += (!v.is_finite()) as usize;
            rec.observe(&theta, v);
            -v
        },
        &x0,
        &bounds,
        &opts.nelder_mead(),
    );
    let theta_hat = layout.decode(&min.x);
    let value = -min.f;
    let mut warnings = Vec::new();
    if failures > 0 {
        warnings.push(format!("inner mode failed at {failures} parameter values"));
    }
    let converged = min.converged && value.is_finite();
    let reason = if !value.is_finite() {
        "Laplace objective is not finite anywhere visited".to_string()
    } else if min.converged {
        "simplex converged".into()
    } else {
        format!("evaluation limit {} reached", opts.max_evals)
    };
    rec.finish(&theta_hat, value);
    Ok(FitReport {
        estimator: Estimator::Laplace,
        theta_hat,
        beta_estimated: true,
        evaluations: rec.evals(),
        trace: rec.trace,
        converged,
        reason,
        elapsed: start.elapsed().as_secs_f64(),
        seed: 0,
        objective: value,
        warnings,
        std_errors: None,
    })
}

/// Approximate standard errors of `(μ, τ², σ², φ, β)` from the numerical
/// Hessian of the Laplace objective at `θ̂`. A fixed `φ` gets 0.
pub fn laplace_standard_errors(
    theta_hat: &Params,
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    fix_phi: Option<f64>,
) -> Result<[f64; 5]> {
    let free: Vec<usize> = (0..5).filter(|&i| !(i == 3 && fix_phi.is_some())).collect();
    let base = theta_hat.as_array();
    let x: Vec<f64> = free.iter().map(|&i| base[i]).collect();
    let h: Vec<f64> = x.iter().map(|v| 1e-3 * v.abs().max(1e-2)).collect();
    let mut ev = Evaluator::new(data, grid);
    let to_theta = |p: &[f64]| {
        let mut all = base;
        for (&i, &v) in free.iter().zip(p) {
            all[i] = v;
        }
        Params {
            mu: all[0],
            tau2: all[1],
            sigma2: all[2],
            phi: all[3],
            beta: all[4],
        }
    };
    let hess = numerical_hessian(|p| ev.eval(&to_theta(p)), &x, &h);
    let d = free.len();
    let m = DMatrix::from_fn(d, d, |i, j| -hess[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "Laplace objective is not finite near the estimate".into(),
        ));
    }
    let cov = m
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular curvature of the Laplace objective".into()))?;
    let mut out = [0.0; 5];
    for (k, &i) in free.iter().enumerate() {
        let v = cov[(k, k)];
        if !(v > 0.0) {
            return Err(Error::Numerical(format!(
                "curvature of the Laplace objective is not negative definite (coordinate {i})"
            )));
        }
        out[i] = v.sqrt();
    }
    Ok(out)
}
