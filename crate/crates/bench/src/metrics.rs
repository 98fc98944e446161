//! Test-set error metrics.

use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub q95: f64,
    pub q99: f64,
    pub maxe: f64,
}

/// Names in the order used by reports.
pub const METRIC_NAMES: [&str; 5] = ["mae", "rmse", "q95", "q99", "maxe"];

impl Metrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "mae" => self.mae,
            "rmse" => self.rmse,
            "q95" => self.q95,
            "q99" => self.q99,
            "maxe" => self.maxe,
            _ => return None,
        })
    }
}

/// Quantile of sorted data with linear interpolation at position `(n - 1) q`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn compute_metrics(predictions: &[f64], labels: &[f64]) -> Result<Metrics, BenchError> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(BenchError::Data(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let mut err: Vec<f64> = predictions.iter().zip(labels).map(|(p, y)| (p - y).abs()).collect();
    if err.iter().any(|e| !e.is_finite()) {
        return Err(BenchError::Data("non-finite prediction error".into()));
    }
    err.sort_by(f64::total_cmp);
    let n = err.len() as f64;
    Ok(Metrics {
        mae: err.iter().sum::<f64>() / n,
        rmse: (err.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        q95: quantile(&err, 0.95),
        q99: quantile(&err, 0.99),
        maxe: *err.last().expect("nonempty"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_errors() {
        let m = compute_metrics(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(m, Metrics { mae: 1.0, rmse: 1.0, q95: 1.0, q99: 1.0, maxe: 1.0 });
    }

    #[test]
    fn hand_values() {
        let m = compute_metrics(&[0.0, 0.0, 0.0, 4.0], &[0.0; 4]).unwrap();
        assert_eq!((m.mae, m.rmse, m.maxe), (1.0, 2.0, 4.0));
        // h = 3 * 0.95 = 2.85, so 0 + 0.85 * 4.
        assert!((m.q95 - 3.4).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatch() {
        assert!(compute_metrics(&[1.0], &[]).is_err());
        assert!(compute_metrics(&[f64::NAN], &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn ordered(errs in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
            let zeros = vec![0.0; errs.len()];
            let m = compute_metrics(&errs, &zeros).unwrap();
            let tol = 1e-9 * m.maxe.max(1.0);
            prop_assert!(m.mae <= m.rmse + tol);
            prop_assert!(m.rmse <= m.maxe + tol);
            prop_assert!(m.q95 <= m.q99 + tol && m.q99 <= m.maxe + tol);
        }
    }
}
