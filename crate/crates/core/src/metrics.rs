//! Prediction error summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::LatentField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mae: f64,
    pub rmse: f64,
    pub n_cells: usize,
}

/// MAE and RMSE of a predicted surface against the truth, averaged over cells.
pub fn evaluate(s_hat: &LatentField, s_true: &LatentField) -> Result<EvalResult> {
    evaluate_slices(s_hat.values(), s_true.values())
}

pub fn evaluate_slices(s_hat: &[f64], s_true: &[f64]) -> Result<EvalResult> {
    if s_hat.len() != s_true.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} cells but truth has {}",
            s_hat.len(),
            s_true.len()
        )));
    }
    if s_hat.is_empty() {
        return Err(Error::Dimension("cannot evaluate an empty surface".into()));
    }
    let n = s_hat.len() as f64;
    let (abs, sq) = s_hat.iter().zip(s_true).fold((0.0, 0.0), |(a, q), (h, t)| {
        let e = h - t;
        (a + e.abs(), q + e * e)
    });
    let mae = abs / n;
    // Guard against rounding putting rmse a hair below mae when errors are equal.
    let rmse = (sq / n).sqrt().max(mae);
    Ok(EvalResult {
        mae,
        rmse,
        n_cells: s_hat.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f(v: &[f64]) -> LatentField {
        LatentField::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hand_cases() {
        let r = evaluate(&f(&[1.0, 2.0]), &f(&[1.0, 2.0])).unwrap();
        assert_eq!((r.mae, r.rmse, r.n_cells), (0.0, 0.0, 2));
        let r = evaluate(&f(&[1.0, -1.0]), &f(&[0.0, 0.0])).unwrap();
        assert_eq!((r.mae, r.rmse), (1.0, 1.0));
        let r = evaluate(&f(&[0.0, 2.0]), &f(&[0.0, 0.0])).unwrap();
        assert_eq!(r.mae, 1.0);
        assert!((r.rmse - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(evaluate(&f(&[1.0]), &f(&[1.0, 2.0])).is_err());
    }

    proptest! {
        #[test]
        fn mae_below_rmse(v in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..60)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let r = evaluate_slices(&a, &b).unwrap();
            prop_assert!(0.0 <= r.mae && r.mae <= r.rmse);
        }

        #[test]
        fn permutation_invariant(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..30), k in 0usize..29) {
            let (mut a, mut b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let r1 = evaluate_slices(&a, &b).unwrap();
            let k = k % a.len();
            a.rotate_left(k);
            b.rotate_left(k);
            let r2 = evaluate_slices(&a, &b).unwrap();
            prop_assert!((r1.mae - r2.mae).abs() < 1e-12 && (r1.rmse - r2.rmse).abs() < 1e-12);
        }
    }
}
