//! Sampling design: the discretized density of locations given the field and
//! preferential simulation of locations.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::LatentField;
use crate::grid::{CellBinning, Point, SpatialGrid};
use crate::rng::rng_from_seed;

/// Observed locations and responses, binned against a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferentialDataset {
    locations: Vec<Point>,
    y: Vec<f64>,
    binning: CellBinning,
}

impl PreferentialDataset {
    pub fn new(locations: Vec<Point>, y: Vec<f64>, grid: &SpatialGrid) -> Result<Self> {
        if locations.len() != y.len() {
            return Err(Error::Dimension(format!(
                "{} locations but {} responses",
                locations.len(),
                y.len()
            )));
        }
        if locations.is_empty() {
            return Err(Error::InsufficientData("dataset has no observations".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InsufficientData(format!("response {i} is not finite")));
        }
        let binning = grid.bin_locations(&locations)?;
        Ok(PreferentialDataset { locations, y, binning })
    }

    /// A dataset with no observations; the posterior of `S` is then the prior
    /// (times the point-process term, which vanishes for `n = 0`).
    pub fn empty(grid: &SpatialGrid) -> Self {
        PreferentialDataset {
            locations: Vec::new(),
            y: Vec::new(),
            binning: CellBinning {
                cell_of: Vec::new(),
                counts: vec![0; grid.len()],
            },
        }
    }

    /// Same observations binned against another grid.
    pub fn rebin(&self, grid: &SpatialGrid) -> Result<Self> {
        Ok(PreferentialDataset {
            locations: self.locations.clone(),
            y: self.y.clone(),
            binning: grid.bin_locations(&self.locations)?,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn locations(&self) -> &[Point] {
        &self.locations
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn binning(&self) -> &CellBinning {
        &self.binning
    }

    /// Number of grid cells the binning refers to.
    pub fn n_cells(&self) -> usize {
        self.binning.counts.len()
    }

    pub(crate) fn check_grid(&self, grid: &SpatialGrid) -> Result<()> {
        if self.n_cells() != grid.len() {
            return Err(Error::Dimension(format!(
                "dataset binned on {} cells, grid has {}",
                self.n_cells(),
                grid.len()
            )));
        }
        Ok(())
    }

    pub fn mean_y(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.len() as f64
    }

    pub fn sd_y(&self) -> f64 {
        let m = self.mean_y();
        let n = self.len() as f64;
        if self.len() < 2 {
            return 0.0;
        }
        (self.y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }
}

/// `log Σ_j exp(x_j)` with the max-shift.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log Σ_j Δ exp(β s_j)`.
pub fn log_normalizer(s: &[f64], beta: f64, cell_area: f64) -> f64 {
    cell_area.ln() + log_sum_exp(s.iter().map(|&v| beta * v))
}

/// Cell selection probabilities `p_j = Δ exp(β s_j) / Σ_k Δ exp(β s_k)`.
pub fn selection_probabilities(s: &LatentField, beta: f64) -> Result<Vec<f64>> {
    let scores: Vec<f64> = s.values().iter().map(|&v| beta * v).collect();
    if let Some(j) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::Overflow(format!(
            "beta * s is not finite at cell {j}; center the field or reduce beta"
        )));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Draws `n` locations: cells are chosen independently with the selection
/// probabilities and each point is placed uniformly inside its cell.
pub fn sample_locations_with(
    s: &LatentField,
    grid: &SpatialGrid,
    beta: f64,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::Config("need at least one location".into()));
    }
    if s.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "field has {} values, grid has {} cells",
            s.len(),
            grid.len()
        )));
    }
    let probs = selection_probabilities(s, beta)?;
    let index = WeightedIndex::new(&probs).map_err(|e| Error::Numerical(format!("invalid selection weights: {e}")))?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let cell = index.sample(rng);
        let (x0, x1, y0, y1) = grid.cell_rect(cell);
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        out.push([x0 + u * (x1 - x0), y0 + v * (y1 - y0)]);
    }
    Ok(out)
}

pub fn sample_locations(s: &LatentField, grid: &SpatialGrid, beta: f64, n: usize, seed: u64) -> Result<Vec<Point>> {
    let mut rng = rng_from_seed(seed);
    sample_locations_with(s, grid, beta, n, &mut rng)
}

/// Grid approximation of `log f(X | S, n)`:
/// `β Σ_j n_j s_j − n log Σ_j Δ exp(β s_j)`.
pub fn log_f_x_given_s(binning: &CellBinning, s: &LatentField, beta: f64, grid: &SpatialGrid) -> Result<f64> {
    if binning.counts.len() != s.len() || s.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "binning has {} cells, field {}, grid {}",
            binning.counts.len(),
            s.len(),
            grid.len()
        )));
    }
    let n = binning.total() as f64;
    let linear: f64 = binning.counts.iter().zip(s.values()).map(|(&c, &v)| c as f64 * v).sum();
    let value = beta * linear - n * log_normalizer(s.values(), beta, grid.cell_area());
    if !value.is_finite() {
        return Err(Error::Numerical("log f(x|s) is not finite".into()));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn beta_zero_gives_uniform_probabilities() {
        let s = LatentField::new(vec![0.3, -1.0, 2.0, 0.0]).unwrap();
        for p in selection_probabilities(&s, 0.0).unwrap() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn large_beta_concentrates_on_max_cell() {
        let s = LatentField::new(vec![0.1, 0.5, 0.9, 0.2, 0.75]).unwrap();
        let p = selection_probabilities(&s, 50.0).unwrap();
        // Direct computation: exp(50·0.9) dominates exp(50·0.75) by e^{7.5}.
        let direct_max = 1.0
            / [0.1f64, 0.5, 0.9, 0.2, 0.75]
                .iter()
                .map(|v| (50.0 * (v - 0.9)).exp())
                .sum::<f64>();
        assert!((p[2] - direct_max).abs() < 1e-12);
        assert!(p[2] > 0.999);
    }

    #[test]
    fn probabilities_normalized_and_monotone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = LatentField::new(vals.clone()).unwrap();
        let p = selection_probabilities(&s, 1.7).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..50 {
            for j in 0..50 {
                if vals[i] > vals[j] {
                    assert!(p[i] > p[j]);
                }
            }
        }
    }

    #[test]
    fn overflow_is_reported() {
        let s = LatentField::new(vec![1e300, 0.0]).unwrap();
        assert!(matches!(selection_probabilities(&s, 1e10), Err(Error::Overflow(_))));
    }

    #[test]
    fn log_density_beta_zero() {
        let grid = SpatialGrid::new(crate::grid::Region::new(0.0, 2.0, 0.0, 3.0).unwrap(), 3, 2).unwrap();
        let s = LatentField::new(vec![0.4, -0.2, 1.0, 0.0, 0.3, 0.8]).unwrap();
        let b = grid.bin_locations(&[[0.1, 0.1], [1.9, 2.9], [1.0, 1.0]]).unwrap();
        let v = log_f_x_given_s(&b, &s, 0.0, &grid).unwrap();
        assert!((v + 3.0 * 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_density_hand_case() {
        let grid = SpatialGrid::unit_square(2, 1).unwrap();
        let s = LatentField::zeros(2);
        let b = grid.bin_locations(&[[0.2, 0.5]]).unwrap();
        assert_eq!(b.counts, vec![1, 0]);
        assert!(log_f_x_given_s(&b, &s, 1.0, &grid).unwrap().abs() < 1e-15);
    }

    #[test]
    fn log_density_matches_naive_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let grid = SpatialGrid::unit_square(3, 2).unwrap();
        for _ in 0..20 {
            let vals: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let beta = rng.random_range(-3.0..3.0);
            let pts: Vec<Point> = (0..7).map(|_| [rng.random(), rng.random()]).collect();
            let b = grid.bin_locations(&pts).unwrap();
            let s = LatentField::new(vals.clone()).unwrap();
            // Naive: (Σ Δ e^{βs})^{-n} Π e^{β s_j n_j}, then log.
            let denom: f64 = vals.iter().map(|v| grid.cell_area() * (beta * v).exp()).sum();
            let prod: f64 = (0..6)
                .map(|j| (beta * vals[j]).exp().powi(b.counts[j] as i32))
                .product();
            let naive = (prod * denom.powi(-7)).ln();
            let v = log_f_x_given_s(&b, &s, beta, &grid).unwrap();
            assert!((v - naive).abs() < 1e-10, "{v} vs {naive}");
        }
    }

    #[test]
    fn shift_cancels_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let grid = SpatialGrid::unit_square(5, 5).unwrap();
        let vals: Vec<f64> = (0..25).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pts: Vec<Point> = (0..12).map(|_| [rng.random(), rng.random()]).collect();
        let b = grid.bin_locations(&pts).unwrap();
        for beta in [-2.0, 0.5, 3.0] {
            let base = log_f_x_given_s(&b, &LatentField::new(vals.clone()).unwrap(), beta, &grid).unwrap();
            let shifted = LatentField::new(vals.iter().map(|v| v + 3.7).collect()).unwrap();
            let moved = log_f_x_given_s(&b, &shifted, beta, &grid).unwrap();
            assert!((base - moved).abs() < 1e-8);
        }
    }

    #[test]
    fn sampled_locations_follow_field() {
        let grid = SpatialGrid::unit_square(10, 10).unwrap();
        let s = LatentField::new((0..100).map(|j| (j % 10) as f64 / 5.0 - 1.0).collect()).unwrap();
        let pts = sample_locations(&s, &grid, 2.0, 500, 3).unwrap();
        let b = grid.bin_locations(&pts).unwrap();
        let mean_at_points: f64 = b.cell_of.iter().map(|&c| s.values()[c]).sum::<f64>() / pts.len() as f64;
        assert!(mean_at_points > s.mean() + 0.5);
        assert_eq!(pts, sample_locations(&s, &grid, 2.0, 500, 3).unwrap());
        assert!(sample_locations(&s, &grid, 2.0, 0, 3).is_err());
    }

    #[test]
    fn dataset_validation() {
        let grid = SpatialGrid::unit_square(3, 3).unwrap();
        assert!(PreferentialDataset::new(vec![[0.1, 0.1]], vec![], &grid).is_err());
        assert!(PreferentialDataset::new(vec![], vec![], &grid).is_err());
        assert!(matches!(
            PreferentialDataset::new(vec![[0.1, 0.1], [2.0, 0.0]], vec![1.0, 2.0], &grid),
            Err(Error::OutOfRegion { index: 1, .. })
        ));
        let d = PreferentialDataset::new(vec![[0.1, 0.1], [0.9, 0.9]], vec![1.0, 2.0], &grid).unwrap();
        assert_eq!(d.binning().counts.iter().sum::<usize>(), 2);
        let finer = d.rebin(&SpatialGrid::unit_square(6, 6).unwrap()).unwrap();
        assert_eq!(finer.n_cells(), 36);
    }
}
