//! Geostatistical inference and prediction when the sampling locations depend
//! on the measured field.
//!
//! The latent field `S` is a stationary Gaussian process with exponential
//! correlation, discretized on a regular grid. Responses are
//! `Y_i = μ + S(x_i) + ε_i` and the locations form a log-Gaussian Cox process
//! with intensity proportional to `exp(β S)`.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod error;
pub mod estimators;
pub mod field;
pub mod grid;
pub mod io;
pub mod likelihood;
pub mod metrics;
pub mod optimize;
pub mod point_process;
pub mod predictor;
pub mod rng;
pub mod simulation;
pub mod studies;

pub use error::{Error, Result};
pub use estimators::{fit, EmConfig, EmVariant, Estimator, FitOptions, FitReport, FitSettings, TraceEntry};
pub use field::{Factor, GeoParams, LatentField, Params};
pub use grid::{CellBinning, GridSpec, Point, Region, SpatialGrid};
pub use likelihood::SufficientStats;
pub use metrics::{evaluate, EvalResult};
pub use point_process::PreferentialDataset;
pub use predictor::{Chain, MhConfig};
pub use simulation::{Simulation, SimulationConfig, Simulator};
