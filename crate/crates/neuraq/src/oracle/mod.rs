//! Exact query evaluation (ground truth for labels and accuracy) and the
//! uniform-sampling baseline with a spatial index over the samples.

mod exact;
mod tree_agg;

pub use exact::{exact_knn_distance, exact_knn_point, exact_raq, label_for, OracleResult};
pub use tree_agg::{tree_agg_build, tree_agg_query, SpatialIndex};

use crate::data::AggKind;

/// Applies an aggregation to the measure values of the matching rows.
///
/// COUNT and SUM of an empty set are 0; AVG/STD/MEDIAN of an empty set are
/// undefined and yield `Empty`. STD is the population standard deviation and
/// the MEDIAN of an even-sized set is the mean of the two middle order
/// statistics.
pub(crate) fn aggregate(kind: AggKind, values: &[f64]) -> OracleResult {
    let m = values.len();
    if m == 0 {
        return match kind {
            AggKind::Count | AggKind::Sum => OracleResult::Value(0.0),
            _ => OracleResult::Empty,
        };
    }
    let value = match kind {
        AggKind::Count => m as f64,
        AggKind::Sum => values.iter().sum(),
        AggKind::Avg => values.iter().sum::<f64>() / m as f64,
        AggKind::Std => {
            let mean = values.iter().sum::<f64>() / m as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            var.sqrt()
        }
        AggKind::Median => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            if m % 2 == 1 {
                sorted[m / 2]
            } else {
                (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
            }
        }
    };
    OracleResult::Value(value)
}
