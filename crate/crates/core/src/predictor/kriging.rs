//! Simple kriging under the Gaussian model that ignores the sampling design.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::{cross_correlation, kernel_matrix, Exponential, Factor, GeoParams, LatentField};
use crate::grid::{Point, SpatialGrid};
use crate::point_process::PreferentialDataset;

/// Conditional means and marginal variances at the kriging targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Kriged {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

struct Fitted {
    factor: Factor,
    weights: DVector<f64>,
    cross: DMatrix<f64>,
}

fn fit(data: &PreferentialDataset, theta: &GeoParams, targets: &[Point]) -> Result<Fitted> {
    theta.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("kriging needs at least one observation".into()));
    }
    let kernel = Exponential::new(theta.phi)?;
    let mut cov = kernel_matrix(data.locations(), &kernel) * theta.sigma2;
    for i in 0..data.len() {
        cov[(i, i)] += theta.tau2;
    }
    let factor = Factor::new(cov)?;
    let resid = DVector::from_iterator(data.len(), data.y().iter().map(|y| y - theta.mu));
    let weights = factor.solve(&resid);
    let cross = cross_correlation(targets, data.locations(), &kernel) * theta.sigma2;
    Ok(Fitted { factor, weights, cross })
}

fn assemble(f: &Fitted, offset: f64, prior_var: f64) -> Kriged {
    let mean = (&f.cross * &f.weights).add_scalar(offset);
    let solved = f.factor.solve_matrix(&f.cross.transpose());
    let variance = (0..f.cross.nrows())
        .map(|t| {
            let reduction: f64 = f
                .cross
                .row(t)
                .iter()
                .zip(solved.column(t).iter())
                .map(|(a, b)| a * b)
                .sum();
            (prior_var - reduction).max(0.0)
        })
        .collect();
    Kriged {
        mean: mean.as_slice().to_vec(),
        variance,
    }
}

/// Prediction of the response `Y` at `targets`; the target variance includes
/// the nugget.
pub fn krige(data: &PreferentialDataset, theta: &GeoParams, targets: &[Point]) -> Result<Kriged> {
    let f = fit(data, theta, targets)?;
    Ok(assemble(&f, theta.mu, theta.sigma2 + theta.tau2))
}

/// Prediction of the signal `S` at `targets` (no mean, no nugget).
pub fn krige_signal(data: &PreferentialDataset, theta: &GeoParams, targets: &[Point]) -> Result<Kriged> {
    let f = fit(data, theta, targets)?;
    Ok(assemble(&f, 0.0, theta.sigma2))
}

/// Signal kriging at the grid centroids as a latent field.
pub fn krige_field(data: &PreferentialDataset, theta: &GeoParams, grid: &SpatialGrid) -> Result<LatentField> {
    LatentField::new(krige_signal(data, theta, grid.centroids())?.mean)
}

/// `μ + ŝ` elementwise.
pub fn predict_y(s_pred: &LatentField, mu: f64) -> Vec<f64> {
    s_pred.values().iter().map(|s| mu + s).collect()
}
