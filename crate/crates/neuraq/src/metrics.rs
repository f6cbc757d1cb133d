//! Accuracy metrics: normalized absolute error for range aggregates and
//! relative error for distance-to-kNN answers.

use crate::error::{Error, Result};
use std::time::Duration;

/// Mean over queries of `|truth_i - predicted_i|`, normalized by the mean
/// absolute ground-truth magnitude over the whole test set.
pub fn normalized_abs_error(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    Ok(mean(&per_query_normalized_abs_errors(truth, predicted)?))
}

/// The per-query normalized absolute errors backing
/// [`normalized_abs_error`]; the metric is their arithmetic mean.
pub fn per_query_normalized_abs_errors(truth: &[f64], predicted: &[f64]) -> Result<Vec<f64>> {
    if truth.is_empty() || truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            context: "normalized_abs_error",
            expected: truth.len().max(1),
            actual: predicted.len(),
        });
    }
    let denom = truth.iter().map(|t| t.abs()).sum::<f64>() / truth.len() as f64;
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "normalized absolute error undefined for all-zero ground truth",
        ));
    }
    Ok(truth
        .iter()
        .zip(predicted)
        .map(|(t, p)| (t - p).abs() / denom)
        .collect())
}

/// `|pred - true| / true` for one distance query. Undefined at `true == 0`;
/// callers route such queries to the normalized absolute error instead.
pub fn relative_error(true_dist: f64, pred_dist: f64) -> Result<f64> {
    if true_dist <= 0.0 {
        return Err(Error::UndefinedMetric(
            "relative error undefined for non-positive true distance",
        ));
    }
    Ok((pred_dist - true_dist).abs() / true_dist)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Which metric the per-query errors of an [`ErrorReport`] were computed
/// under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMetric {
    NormalizedAbs,
    Relative,
}

/// Accuracy summary over one evaluated workload.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub mean_normalized_abs_error: f64,
    /// Present only for distance-to-kNN workloads where every true distance
    /// is positive.
    pub mean_relative_error: Option<f64>,
    /// Per-query values of the primary metric (see `metric`).
    pub per_query_errors: Vec<f64>,
    pub metric: ErrorMetric,
    pub mean_query_time: Duration,
    pub count: usize,
}

impl ErrorReport {
    pub fn new(
        normalized: Vec<f64>,
        relative: Option<Vec<f64>>,
        mean_query_time: Duration,
    ) -> Self {
        let mean_normalized = mean(&normalized);
        match relative {
            Some(rel) => {
                debug_assert_eq!(rel.len(), normalized.len());
                ErrorReport {
                    mean_normalized_abs_error: mean_normalized,
                    mean_relative_error: Some(mean(&rel)),
                    count: rel.len(),
                    per_query_errors: rel,
                    metric: ErrorMetric::Relative,
                    mean_query_time,
                }
            }
            None => ErrorReport {
                mean_normalized_abs_error: mean_normalized,
                mean_relative_error: None,
                count: normalized.len(),
                per_query_errors: normalized,
                metric: ErrorMetric::NormalizedAbs,
                mean_query_time,
            },
        }
    }

    /// The headline error: relative error when defined, otherwise the
    /// normalized absolute error.
    pub fn primary_error(&self) -> f64 {
        self.mean_relative_error
            .unwrap_or(self.mean_normalized_abs_error)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalized_abs_error_examples() {
        assert!((normalized_abs_error(&[10.0], &[9.0]).unwrap() - 0.1).abs() < 1e-15);
        let t = [3.0, -1.5, 7.25];
        assert_eq!(normalized_abs_error(&t, &t).unwrap(), 0.0);
        // mean |truth| = 3, so errors are 1/3 and 0
        let expected = (1.0 / 3.0 + 0.0) / 2.0;
        assert!((normalized_abs_error(&[2.0, 4.0], &[3.0, 4.0]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn normalized_abs_error_undefined_for_zero_truth() {
        let err = normalized_abs_error(&[0.0, 0.0], &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::UndefinedMetric(_)));
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(2.0, 2.0).unwrap(), 0.0);
        assert!((relative_error(2.0, 2.1).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(relative_error(1.0, 0.0).unwrap(), 1.0);
        assert!(relative_error(0.0, 1.0).is_err());
    }

    #[test]
    fn report_means_match_constituents() {
        let normalized = vec![0.1, 0.2, 0.3];
        let relative = vec![0.05, 0.15, 0.4];
        let report = ErrorReport::new(normalized.clone(), Some(relative.clone()), Duration::ZERO);
        let mean_n = normalized.iter().sum::<f64>() / 3.0;
        let mean_r = relative.iter().sum::<f64>() / 3.0;
        assert!((report.mean_normalized_abs_error - mean_n).abs() < 1e-12);
        assert!((report.mean_relative_error.unwrap() - mean_r).abs() < 1e-12);
        assert_eq!(report.count, report.per_query_errors.len());
        assert_eq!(report.metric, ErrorMetric::Relative);
    }

    proptest! {
        #[test]
        fn zero_error_iff_equal(
            truth in proptest::collection::vec(-1e3f64..1e3, 1..40),
            noise in proptest::collection::vec(-1.0f64..1.0, 1..40),
        ) {
            prop_assume!(truth.iter().any(|t| *t != 0.0));
            let n = truth.len().min(noise.len());
            let truth = &truth[..n];
            let predicted: Vec<f64> = truth
                .iter()
                .zip(&noise[..n])
                .map(|(t, e)| t + e)
                .collect();
            let err = normalized_abs_error(truth, &predicted).unwrap();
            let identical = truth.iter().zip(&predicted).all(|(t, p)| t == p);
            prop_assert_eq!(err == 0.0, identical);
        }
    }
}
