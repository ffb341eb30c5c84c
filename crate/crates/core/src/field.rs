//! Stationary zero-mean Gaussian field on a set of points.
//!
//! Holds the model parameters, the exponential correlation kernel, a
//! jittered Cholesky factorization, unconditional sampling and the
//! conditional sampler for `S | Y` used by the Monte Carlo likelihood.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Point, SpatialGrid};
use crate::point_process::PreferentialDataset;
use crate::rng::rng_from_seed;

/// Full parameter vector `(μ, τ², σ², φ, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub mu: f64,
    pub tau2: f64,
    pub sigma2: f64,
    pub phi: f64,
    pub beta: f64,
}

/// Parameters of the non-preferential model `(μ, τ², σ², φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoParams {
    pub mu: f64,
    pub tau2: f64,
    pub sigma2: f64,
    pub phi: f64,
}

fn check_geo(mu: f64, tau2: f64, sigma2: f64, phi: f64) -> Result<()> {
    if !mu.is_finite() {
        return Err(Error::ParamDomain(format!("mu must be finite, got {mu}")));
    }
    if !(tau2 >= 0.0) || !tau2.is_finite() {
        return Err(Error::ParamDomain(format!("tau2 must be >= 0, got {tau2}")));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::ParamDomain(format!("sigma2 must be > 0, got {sigma2}")));
    }
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(Error::ParamDomain(format!("phi must be > 0, got {phi}")));
    }
    Ok(())
}

impl Params {
    /// Values used throughout the simulation study.
    pub const STUDY_TRUTH: Params = Params {
        mu: 4.0,
        tau2: 0.1,
        sigma2: 1.5,
        phi: 0.15,
        beta: 2.0,
    };

    pub fn new(mu: f64, tau2: f64, sigma2: f64, phi: f64, beta: f64) -> Result<Self> {
        let p = Params {
            mu,
            tau2,
            sigma2,
            phi,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_geo(self.mu, self.tau2, self.sigma2, self.phi)?;
        if !self.beta.is_finite() {
            return Err(Error::ParamDomain(format!("beta must be finite, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn geo(&self) -> GeoParams {
        GeoParams {
            mu: self.mu,
            tau2: self.tau2,
            sigma2: self.sigma2,
            phi: self.phi,
        }
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Params { beta, ..self }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.mu, self.tau2, self.sigma2, self.phi, self.beta]
    }
}

impl GeoParams {
    pub fn new(mu: f64, tau2: f64, sigma2: f64, phi: f64) -> Result<Self> {
        check_geo(mu, tau2, sigma2, phi)?;
        Ok(GeoParams { mu, tau2, sigma2, phi })
    }

    pub fn validate(&self) -> Result<()> {
        check_geo(self.mu, self.tau2, self.sigma2, self.phi)
    }

    pub fn with_beta(self, beta: f64) -> Params {
        Params {
            mu: self.mu,
            tau2: self.tau2,
            sigma2: self.sigma2,
            phi: self.phi,
            beta,
        }
    }
}

/// Realization of `S` on the grid centroids, in grid cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentField {
    values: Vec<f64>,
}

impl LatentField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("latent field entry {i} is not finite")));
        }
        Ok(LatentField { values })
    }

    pub fn zeros(n: usize) -> Self {
        LatentField { values: vec![0.0; n] }
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        LatentField { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }
}

/// Isotropic correlation function of distance.
pub trait Correlation {
    fn correlation(&self, h: f64) -> f64;
}

/// `ρ(h) = exp(−h/φ)`, the Matérn kernel with smoothness 1/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponential {
    phi: f64,
}

impl Exponential {
    pub fn new(phi: f64) -> Result<Self> {
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::ParamDomain(format!("phi must be > 0, got {phi}")));
        }
        Ok(Exponential { phi })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

impl Correlation for Exponential {
    fn correlation(&self, h: f64) -> f64 {
        (-h / self.phi).exp()
    }
}

/// `exp(−h/φ)` for a distance `h ≥ 0`.
pub fn exp_correlation(h: f64, phi: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(Error::ParamDomain(format!("distance must be >= 0, got {h}")));
    }
    Ok(Exponential::new(phi)?.correlation(h))
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_distinct(points: &[Point]) -> Result<()> {
    for (i, a) in points.iter().enumerate() {
        for (j, b) in points.iter().enumerate().skip(i + 1) {
            if a == b {
                return Err(Error::Degenerate(format!(
                    "points {i} and {j} coincide at ({}, {})",
                    a[0], a[1]
                )));
            }
        }
    }
    Ok(())
}

/// Correlation matrix of `points` under `kernel`, without any duplicate check.
pub fn kernel_matrix(points: &[Point], kernel: &impl Correlation) -> DMatrix<f64> {
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = 1.0;
        for i in (j + 1)..n {
            let r = kernel.correlation(distance(points[i], points[j]));
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    m
}

/// Cross-correlation between two point sets (rows `a`, columns `b`).
pub fn cross_correlation(a: &[Point], b: &[Point], kernel: &impl Correlation) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kernel.correlation(distance(a[i], b[j])))
}

/// Exponential correlation matrix `R(φ)` of distinct points.
pub fn correlation_matrix(points: &[Point], phi: f64) -> Result<DMatrix<f64>> {
    let kernel = Exponential::new(phi)?;
    check_distinct(points)?;
    Ok(kernel_matrix(points, &kernel))
}

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Cholesky factor of a symmetric positive definite matrix, possibly after
/// adding a diagonal jitter.
#[derive(Debug, Clone)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factor {
    /// Factorizes `m`; on failure adds `ε·trace/N` to the diagonal with
    /// `ε = 1e-10, 1e-9, …, 1e-6` before giving up.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || n != m.ncols() {
            return Err(Error::Dimension(format!(
                "cannot factorize a {}x{} matrix",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("matrix has non-finite entries".into()));
        }
        if let Some(chol) = Cholesky::new(m.clone()) {
            return Ok(Factor { chol, jitter: 0.0 });
        }
        let scale = m.trace() / n as f64;
        let mut eps = JITTER_START;
        let mut tried = Vec::new();
        while eps <= JITTER_MAX * 1.000001 {
            let jitter = eps * scale;
            let mut jittered = m.clone();
            for i in 0..n {
                jittered[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(jittered) {
                return Ok(Factor { chol, jitter });
            }
            tried.push(jitter);
            eps *= 10.0;
        }
        Err(Error::Numerical(format!(
            "Cholesky failed for {n}x{n} matrix after jitters {tried:?}"
        )))
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Diagonal jitter that was added, zero if none.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor `L` with `M = L Lᵀ`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `vᵀ M⁻¹ v` via one triangular solve.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        let w = self
            .chol
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal");
        w.norm_squared()
    }

    /// `L z`, mapping white noise to a draw with covariance `M`.
    pub fn mul_l(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = z.len();
        let mut out = DVector::zeros(n);
        for j in 0..n {
            let zj = z[j];
            if zj == 0.0 {
                continue;
            }
            for i in j..n {
                out[i] += l[(i, j)] * zj;
            }
        }
        out
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

pub fn standard_normals(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draw from `N(0, σ² R)` given the factor of `R`, consuming `dim` normals.
pub fn sample_gp_with(factor: &Factor, sigma2: f64, rng: &mut impl Rng) -> Result<LatentField> {
    if !(sigma2 >= 0.0) {
        return Err(Error::ParamDomain(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    let z = standard_normals(rng, factor.dim());
    if sigma2 == 0.0 {
        return Ok(LatentField::zeros(factor.dim()));
    }
    let s = factor.mul_l(&z) * sigma2.sqrt();
    LatentField::new(s.as_slice().to_vec())
}

/// Draw from `N(0, σ² R)`; reproducible given `seed`.
pub fn sample_gp(r: &DMatrix<f64>, sigma2: f64, seed: u64) -> Result<LatentField> {
    let factor = Factor::new(r.clone())?;
    let mut rng = rng_from_seed(seed);
    sample_gp_with(&factor, sigma2, &mut rng)
}

/// Exact sampler of `S | Y = y` on the grid (Rue–Held correction of an
/// unconditional draw).
///
/// Each observation reads `S` at the centroid of its containing cell. For a
/// fixed `θ` the expensive factorizations are done once; draws are then a
/// deterministic function of the white noise, which lets callers reuse the
/// same noise across parameter values.
pub struct ConditionalSampler {
    sigma: f64,
    tau: f64,
    mu: f64,
    r_factor: Factor,
    /// `σ² R C'`, N×n.
    cross: DMatrix<f64>,
    /// `C σ² R C' + τ² I`.
    obs_factor: Factor,
    cells: Vec<usize>,
    y: DVector<f64>,
}

impl ConditionalSampler {
    pub fn new(data: &PreferentialDataset, grid: &SpatialGrid, theta: &GeoParams) -> Result<Self> {
        theta.validate()?;
        let n = data.len();
        let big_n = grid.len();
        let r = kernel_matrix(grid.centroids(), &Exponential::new(theta.phi)?);
        let cells = data.binning().cell_of.clone();
        let cross = DMatrix::from_fn(big_n, n, |i, k| theta.sigma2 * r[(i, cells[k])]);
        let mut obs = DMatrix::from_fn(n, n, |a, b| theta.sigma2 * r[(cells[a], cells[b])]);
        for i in 0..n {
            obs[(i, i)] += theta.tau2;
        }
        let obs_factor = match Cholesky::new(obs) {
            Some(chol) => Factor { chol, jitter: 0.0 },
            None => {
                return Err(Error::Numerical(format!(
                    "observation covariance is singular (tau2 = {})",
                    theta.tau2
                )))
            }
        };
        Ok(ConditionalSampler {
            sigma: theta.sigma2.sqrt(),
            tau: theta.tau2.sqrt(),
            mu: theta.mu,
            r_factor: Factor::new(r)?,
            cross,
            obs_factor,
            cells,
            y: DVector::from_column_slice(data.y()),
        })
    }

    /// Number of white-noise coordinates for the field and for the nugget.
    pub fn noise_dims(&self) -> (usize, usize) {
        (self.r_factor.dim(), self.y.len())
    }

    /// Conditional draw from white noise `z_field ∈ ℝᴺ` and `z_obs ∈ ℝⁿ`.
    pub fn draw_from(&self, z_field: &DVector<f64>, z_obs: &DVector<f64>) -> LatentField {
        let s = self.r_factor.mul_l(z_field) * self.sigma;
        let resid = DVector::from_fn(self.y.len(), |i, _| {
            self.y[i] - self.mu + self.tau * z_obs[i] - s[self.cells[i]]
        });
        let w = self.obs_factor.solve(&resid);
        let out = s + &self.cross * w;
        LatentField::from_vec_unchecked(out.as_slice().to_vec())
    }

    pub fn draw(&self, rng: &mut impl Rng) -> LatentField {
        let (nf, no) = self.noise_dims();
        let zf = standard_normals(rng, nf);
        let zo = standard_normals(rng, no);
        self.draw_from(&zf, &zo)
    }
}

/// One draw of `S | Y = y` on the grid; reproducible given `seed`.
pub fn conditional_gp_given_y(
    data: &PreferentialDataset,
    grid: &SpatialGrid,
    theta: &Params,
    seed: u64,
) -> Result<LatentField> {
    let sampler = ConditionalSampler::new(data, grid, &theta.geo())?;
    let mut rng = rng_from_seed(seed);
    LatentField::new(sampler.draw(&mut rng).into_values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Region;

    #[test]
    fn exp_correlation_values() {
        assert_eq!(exp_correlation(0.0, 0.7).unwrap(), 1.0);
        assert!((exp_correlation(0.4, 0.4).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!((exp_correlation(0.3, 0.15).unwrap() - 0.135335283236612).abs() < 1e-12);
        assert!(exp_correlation(0.3, 0.0).is_err());
        assert!(exp_correlation(0.3, -1.0).is_err());
    }

    #[test]
    fn exp_correlation_monotone() {
        let mut prev = 1.0;
        for k in 1..50 {
            let h = k as f64 * 0.05;
            let c = exp_correlation(h, 0.3).unwrap();
            assert!(c < prev);
            assert!(exp_correlation(h, 0.31).unwrap() > c);
            prev = c;
        }
    }

    #[test]
    fn correlation_matrix_small_cases() {
        let one = correlation_matrix(&[[0.2, 0.3]], 0.5).unwrap();
        assert_eq!(one, DMatrix::from_element(1, 1, 1.0));
        let two = correlation_matrix(&[[0.0, 0.0], [0.3, 0.4]], 0.25).unwrap();
        assert!((two[(0, 1)] - (-2f64).exp()).abs() < 1e-15);
        assert_eq!(two[(0, 1)], two[(1, 0)]);
        assert!(matches!(
            correlation_matrix(&[[0.1, 0.1], [0.1, 0.1]], 0.2),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn grid_correlation_factorizes() {
        let grid = SpatialGrid::unit_square(15, 15).unwrap();
        let r = correlation_matrix(grid.centroids(), 0.15).unwrap();
        for v in r.iter() {
            assert!(*v > 0.0 && *v <= 1.0);
        }
        assert_eq!(r, r.transpose());
        let f = Factor::new(r.clone()).unwrap();
        // Oracle: L Lᵀ reproduces R.
        let l = f.l();
        let back = &l * l.transpose();
        let mut rdiag = r.clone();
        for i in 0..r.nrows() {
            rdiag[(i, i)] += f.jitter();
        }
        assert!((back - rdiag).amax() < 1e-10);
    }

    #[test]
    fn jitter_rescues_semidefinite_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = Factor::new(m).unwrap();
        assert!(f.jitter() > 0.0 && f.jitter() <= 1e-6);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = Factor::new(bad).unwrap_err();
        assert!(err.to_string().contains("jitters"));
    }

    #[test]
    fn sample_gp_small_cases() {
        let r = DMatrix::from_element(1, 1, 1.0);
        let zero = sample_gp(&r, 0.0, 3).unwrap();
        assert_eq!(zero.values(), &[0.0]);
        let draw = sample_gp(&r, 1.5, 3).unwrap();
        let mut rng = rng_from_seed(3);
        let z: f64 = rng.sample(StandardNormal);
        assert!((draw.values()[0] - z * 1.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn sample_gp_reproducible() {
        let grid = SpatialGrid::unit_square(5, 5).unwrap();
        let r = correlation_matrix(grid.centroids(), 0.2).unwrap();
        let a = sample_gp(&r, 1.0, 42).unwrap();
        let b = sample_gp(&r, 1.0, 42).unwrap();
        let c = sample_gp(&r, 1.0, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_covariance_matches() {
        let pts = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.3]];
        let sigma2 = 1.3;
        let r = correlation_matrix(&pts, 0.2).unwrap();
        let f = Factor::new(r.clone()).unwrap();
        let mut rng = rng_from_seed(7);
        let draws: Vec<LatentField> = (0..10_000)
            .map(|_| sample_gp_with(&f, sigma2, &mut rng).unwrap())
            .collect();
        let m = draws.len() as f64;
        for a in 0..3 {
            for b in 0..3 {
                let prods: Vec<f64> = draws.iter().map(|d| d.values()[a] * d.values()[b]).collect();
                let mean = prods.iter().sum::<f64>() / m;
                let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1.0);
                let se = (var / m).sqrt();
                let target = sigma2 * r[(a, b)];
                assert!((mean - target).abs() < 3.0 * se, "entry ({a},{b}): {mean} vs {target}");
            }
        }
    }

    fn tiny_dataset(grid: &SpatialGrid, pts: Vec<Point>, y: Vec<f64>) -> PreferentialDataset {
        PreferentialDataset::new(pts, y, grid).unwrap()
    }

    #[test]
    fn conditional_interpolates_without_nugget() {
        let grid = SpatialGrid::unit_square(1, 1).unwrap();
        let data = tiny_dataset(&grid, vec![[0.3, 0.6]], vec![2.5]);
        let theta = Params::new(1.0, 0.0, 2.0, 0.2, 0.0).unwrap();
        let s = conditional_gp_given_y(&data, &grid, &theta, 9).unwrap();
        assert!((s.values()[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn huge_nugget_returns_unconditional_draw() {
        let grid = SpatialGrid::unit_square(4, 4).unwrap();
        let data = tiny_dataset(&grid, vec![[0.1, 0.1], [0.6, 0.8]], vec![5.0, 3.0]);
        let theta = Params::new(4.0, 1e6, 1.5, 0.15, 0.0).unwrap();
        let sampler = ConditionalSampler::new(&data, &grid, &theta.geo()).unwrap();
        let mut rng = rng_from_seed(5);
        let zf = standard_normals(&mut rng, 16);
        let zo = standard_normals(&mut rng, 2);
        let cond = sampler.draw_from(&zf, &zo);
        let r = correlation_matrix(grid.centroids(), 0.15).unwrap();
        let uncond = Factor::new(r).unwrap().mul_l(&zf) * 1.5f64.sqrt();
        let sigma = 1.5f64.sqrt();
        for i in 0..16 {
            assert!((cond.values()[i] - uncond[i]).abs() < 1e-2 * sigma);
        }
    }

    #[test]
    fn conditional_moments_match_gaussian_conditioning() {
        // Oracle: joint Gaussian of (S, Y) with S ~ N(0, σ²R), Y = μ + CS + ε.
        // E[S|y] = σ²RC' A⁻¹ (y − μ), Cov = σ²R − σ²RC' A⁻¹ C σ²R, A = Cσ²RC' + τ²I.
        let grid = SpatialGrid::new(Region::new(0.0, 2.0, 0.0, 2.0).unwrap(), 2, 2).unwrap();
        let data = tiny_dataset(&grid, vec![[0.2, 0.3], [1.7, 1.1]], vec![3.1, 4.6]);
        let theta = Params::new(4.0, 0.3, 1.2, 0.8, 0.0).unwrap();
        let r = correlation_matrix(grid.centroids(), theta.phi).unwrap();
        let cells = &data.binning().cell_of;
        let sig = &r * theta.sigma2;
        let sc = DMatrix::from_fn(4, 2, |i, k| sig[(i, cells[k])]);
        let mut a = DMatrix::from_fn(2, 2, |p, q| sig[(cells[p], cells[q])]);
        a[(0, 0)] += theta.tau2;
        a[(1, 1)] += theta.tau2;
        let a_inv = a.try_inverse().unwrap();
        let resid = DVector::from_vec(vec![3.1 - 4.0, 4.6 - 4.0]);
        let mean = &sc * &a_inv * resid;
        let cov = &sig - &sc * &a_inv * sc.transpose();

        let sampler = ConditionalSampler::new(&data, &grid, &theta.geo()).unwrap();
        let mut rng = rng_from_seed(2024);
        let draws: Vec<LatentField> = (0..200_000).map(|_| sampler.draw(&mut rng)).collect();
        let m = draws.len() as f64;
        for i in 0..4 {
            let xs: Vec<f64> = draws.iter().map(|d| d.values()[i]).collect();
            let avg = xs.iter().sum::<f64>() / m;
            let se = (cov[(i, i)] / m).sqrt();
            assert!((avg - mean[i]).abs() < 3.0 * se, "mean {i}: {avg} vs {}", mean[i]);
            for j in 0..4 {
                let prods: Vec<f64> = draws
                    .iter()
                    .map(|d| (d.values()[i] - mean[i]) * (d.values()[j] - mean[j]))
                    .collect();
                let c = prods.iter().sum::<f64>() / m;
                let v = prods.iter().map(|p| (p - c).powi(2)).sum::<f64>() / (m - 1.0);
                assert!(
                    (c - cov[(i, j)]).abs() < 3.0 * (v / m).sqrt(),
                    "cov ({i},{j}): {c} vs {}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn small_nugget_pulls_observed_cells_to_data() {
        let grid = SpatialGrid::unit_square(3, 3).unwrap();
        let data = tiny_dataset(&grid, vec![[0.1, 0.1], [0.9, 0.9]], vec![5.0, 2.0]);
        let mut prev = f64::INFINITY;
        for tau2 in [1e-2, 1e-4, 1e-6] {
            let theta = Params::new(4.0, tau2, 1.0, 0.3, 0.0).unwrap();
            let s = conditional_gp_given_y(&data, &grid, &theta, 1).unwrap();
            let gap = (s.values()[0] - 1.0).abs() + (s.values()[8] + 2.0).abs();
            assert!(gap < prev + 1e-12);
            prev = gap;
        }
        assert!(prev < 1e-2);
    }
}
