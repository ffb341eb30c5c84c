//! Prediction of the latent field and the response surface.

pub mod kriging;
pub mod mh;

pub use kriging::{krige, krige_field, krige_signal, predict_y, Kriged};
pub use mh::{
    block_log_acceptance, block_partition, predict_s, run_chain, sample_predictive, BlockSampler, Chain, ChainState,
    MhConfig, Posterior,
};

use crate::error::Result;
use crate::field::{LatentField, Params};
use crate::grid::SpatialGrid;
use crate::point_process::PreferentialDataset;

/// Mode of `f(S, X, Y; θ)` over `S`.
pub fn predict_s_mode(theta: &Params, data: &PreferentialDataset, grid: &SpatialGrid) -> Result<LatentField> {
    Ok(crate::estimators::laplace::laplace_mode_and_hessian(theta, data, grid)?.mode)
}
