//! Maximum likelihood under the non-preferential Gaussian model.

use std::time::Instant;

use super::{location_diameter, Estimator, FitOptions, FitReport, Layout, ParamBox, Recorder};
use crate::error::{Error, Result};
use crate::field::Params;
use crate::likelihood::nonpref_marginal_loglik;
use crate::optimize::nelder_mead;
use crate::point_process::PreferentialDataset;

/// Maximizes the marginal likelihood of `y` over `(μ, τ², σ², φ)` on the
/// transformed scale. `β` is not part of the model and is reported as 0.
pub fn fit_npg(data: &PreferentialDataset, init: &Params, opts: &FitOptions) -> Result<FitReport> {
    opts.validate()?;
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "NPG needs at least 2 observations, got {}",
            data.len()
        )));
    }
    let start = Instant::now();
    let layout = Layout {
        fix_phi: opts.fix_phi,
        with_beta: false,
    };
    let boxes = ParamBox::new(data, location_diameter(data));
    let bounds = layout.bounds(&boxes);
    let x0 = layout.encode(&boxes.clamp_theta(&Params { beta: 0.0, ..*init }));
    let mut rec = Recorder::new();
    let objective = |theta: &Params| nonpref_marginal_loglik(&theta.geo(), data).unwrap_or(f64::NEG_INFINITY);
    let min = nelder_mead(
        |x| {
            let theta = layout.decode(x);
            let v = objective(&theta);
            rec.observe(&theta, v);
            -v
        },
        &x0,
        &bounds,
        &opts.nelder_mead(),
    );
    let theta_hat = layout.decode(&min.x);
    let value = -min.f;
    if !value.is_finite() {
        return Err(Error::Numerical(
            "marginal likelihood is not finite anywhere visited".into(),
        ));
    }
    rec.finish(&theta_hat, value);
    Ok(FitReport {
        estimator: Estimator::Npg,
        theta_hat,
        beta_estimated: false,
        evaluations: rec.evals(),
        trace: rec.trace,
        converged: min.converged,
        reason: if min.converged {
            "simplex converged".into()
        } else {
            format!("evaluation limit {} reached", opts.max_evals)
        },
        elapsed: start.elapsed().as_secs_f64(),
        seed: 0,
        objective: value,
        warnings: Vec::new(),
        std_errors: None,
    })
}
