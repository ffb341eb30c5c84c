//! Regular rectangular discretization of the study region.
//!
//! Cells are indexed row-major: cell `(row, col)` has raw index
//! `row * nx + col`, where `row` counts upward from `y_min` and `col`
//! rightward from `x_min`. When an inclusion mask is applied, only active
//! cells are kept and they are renumbered `0..N` in the same row-major order.
//! Every vector or matrix indexed by cells uses this compact ordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the plane.
pub type Point = [f64; 2];

/// Axis-aligned study rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub const UNIT_SQUARE: Region = Region {
        x_min: 0.0,
        x_max: 1.0,
        y_min: 0.0,
        y_max: 1.0,
    };

    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let region = Region {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        region.validate()?;
        Ok(region)
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::InvalidRegion(format!(
                "need x_max > x_min and y_max > y_min, got x=[{}, {}], y=[{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Length of the diagonal.
    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

/// Serializable description of a grid: region, cell counts and optional mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: Region,
    pub nx: usize,
    pub ny: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
}

/// A regular grid over a rectangle, optionally restricted by an inclusion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    region: Region,
    nx: usize,
    ny: usize,
    cell_area: f64,
    centroids: Vec<Point>,
    raw_to_cell: Vec<Option<usize>>,
    cell_to_raw: Vec<usize>,
}

impl SpatialGrid {
    /// Builds the full `nx × ny` grid with all cells active.
    pub fn new(region: Region, nx: usize, ny: usize) -> Result<Self> {
        region.validate()?;
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidRegion(format!(
                "cell counts must be positive, got {nx}x{ny}"
            )));
        }
        let raw = nx * ny;
        let cell_area = region.area() / raw as f64;
        if !(cell_area > 0.0) {
            return Err(Error::InvalidRegion("cell area underflows to zero".into()));
        }
        let mut grid = SpatialGrid {
            region,
            nx,
            ny,
            cell_area,
            centroids: Vec::with_capacity(raw),
            raw_to_cell: (0..raw).map(Some).collect(),
            cell_to_raw: (0..raw).collect(),
        };
        grid.centroids = (0..raw).map(|r| grid.raw_centroid(r)).collect();
        Ok(grid)
    }

    /// Unit square split into `nx × ny` cells.
    pub fn unit_square(nx: usize, ny: usize) -> Result<Self> {
        Self::new(Region::UNIT_SQUARE, nx, ny)
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        let grid = Self::new(spec.bounds, spec.nx, spec.ny)?;
        match &spec.mask {
            Some(mask) => grid.with_mask(mask),
            None => Ok(grid),
        }
    }

    pub fn spec(&self) -> GridSpec {
        let full = self.cell_to_raw.len() == self.nx * self.ny;
        GridSpec {
            bounds: self.region,
            nx: self.nx,
            ny: self.ny,
            mask: (!full).then(|| self.raw_to_cell.iter().map(Option::is_some).collect()),
        }
    }

    /// Keeps only cells whose raw row-major entry in `mask` is true.
    ///
    /// Masked-out cells drop out of every integral; the cell area is unchanged.
    pub fn with_mask(self, mask: &[bool]) -> Result<Self> {
        let raw = self.nx * self.ny;
        if mask.len() != raw {
            return Err(Error::Dimension(format!(
                "mask has {} entries, grid has {raw} cells",
                mask.len()
            )));
        }
        let cell_to_raw: Vec<usize> = (0..raw).filter(|&r| mask[r]).collect();
        if cell_to_raw.is_empty() {
            return Err(Error::InvalidRegion("mask excludes every cell".into()));
        }
        let mut raw_to_cell = vec![None; raw];
        for (cell, &r) in cell_to_raw.iter().enumerate() {
            raw_to_cell[r] = Some(cell);
        }
        let centroids = cell_to_raw.iter().map(|&r| self.raw_centroid(r)).collect();
        Ok(SpatialGrid {
            centroids,
            raw_to_cell,
            cell_to_raw,
            ..self
        })
    }

    fn raw_centroid(&self, raw: usize) -> Point {
        let (row, col) = (raw / self.nx, raw % self.nx);
        let dx = self.region.width() / self.nx as f64;
        let dy = self.region.height() / self.ny as f64;
        [
            self.region.x_min + (col as f64 + 0.5) * dx,
            self.region.y_min + (row as f64 + 0.5) * dy,
        ]
    }

    /// Number of active cells `N`.
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    /// Uniform cell area `Δ`.
    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    /// Total area of the active cells, `N·Δ`.
    pub fn active_area(&self) -> f64 {
        self.cell_area * self.len() as f64
    }

    pub fn centroids(&self) -> &[Point] {
        &self.centroids
    }

    pub fn centroid(&self, cell: usize) -> Point {
        self.centroids[cell]
    }

    /// Raw `(row, col)` position of an active cell.
    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        let raw = self.cell_to_raw[cell];
        (raw / self.nx, raw % self.nx)
    }

    /// Bounds `(x0, x1, y0, y1)` of an active cell.
    pub fn cell_rect(&self, cell: usize) -> (f64, f64, f64, f64) {
        let (row, col) = self.row_col(cell);
        let dx = self.region.width() / self.nx as f64;
        let dy = self.region.height() / self.ny as f64;
        let x0 = self.region.x_min + col as f64 * dx;
        let y0 = self.region.y_min + row as f64 * dy;
        (x0, x0 + dx, y0, y0 + dy)
    }

    /// Active cell containing `p`, using `[left, right) × [bottom, top)`
    /// membership with the last column and row closed.
    pub fn locate(&self, p: Point) -> Option<usize> {
        if !self.region.contains(p) {
            return None;
        }
        let fx = (p[0] - self.region.x_min) / self.region.width() * self.nx as f64;
        let fy = (p[1] - self.region.y_min) / self.region.height() * self.ny as f64;
        let col = (fx.floor() as usize).min(self.nx - 1);
        let row = (fy.floor() as usize).min(self.ny - 1);
        self.raw_to_cell[row * self.nx + col]
    }

    /// Assigns every location to its containing cell.
    pub fn bin_locations(&self, locations: &[Point]) -> Result<CellBinning> {
        let mut cell_of = Vec::with_capacity(locations.len());
        let mut counts = vec![0usize; self.len()];
        for (index, &p) in locations.iter().enumerate() {
            let cell = self.locate(p).ok_or(Error::OutOfRegion {
                index,
                x: p[0],
                y: p[1],
            })?;
            cell_of.push(cell);
            counts[cell] += 1;
        }
        Ok(CellBinning { cell_of, counts })
    }
}

/// Assignment of observations to grid cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellBinning {
    /// Cell index `j(i)` of each observation.
    pub cell_of: Vec<usize>,
    /// Number of observations `n_j` in each cell.
    pub counts: Vec<usize>,
}

impl CellBinning {
    /// Total number of binned observations.
    pub fn total(&self) -> usize {
        self.cell_of.len()
    }

    /// Cells holding at least one observation.
    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(j, _)| j)
    }
}
