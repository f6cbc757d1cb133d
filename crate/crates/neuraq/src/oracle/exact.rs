//! Linear-scan and brute-force oracles: the reference answers every other
//! component is measured against.

use crate::data::{Dataset, QueryFunctionSpec, QueryInstance, QueryVariant};
use crate::error::{Error, Result};

/// Result of an exact range-aggregate evaluation. `Empty` marks an undefined
/// aggregate over zero matching rows (AVG/STD/MEDIAN only; COUNT and SUM of
/// an empty set are 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleResult {
    Value(f64),
    Empty,
}

impl OracleResult {
    pub fn value(self) -> Option<f64> {
        match self {
            OracleResult::Value(v) => Some(v),
            OracleResult::Empty => None,
        }
    }
}

/// Answers a range aggregate query by scanning every row.
pub fn exact_raq(
    dataset: &Dataset,
    spec: &QueryFunctionSpec,
    q: &QueryInstance,
) -> Result<OracleResult> {
    let QueryVariant::Raq { aggregation, .. } = &spec.variant else {
        return Err(Error::Contract("exact_raq requires an RAQ spec".into()));
    };
    spec.validate_for(dataset)?;
    let measure = aggregation.measure_attribute;
    let mut values = Vec::new();
    for row in dataset.rows() {
        if spec.matches_row(q, row)? {
            values.push(row[measure]);
        }
    }
    Ok(super::aggregate(aggregation.kind, &values))
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
}

fn check_k(dataset: &Dataset, k: usize) -> Result<()> {
    if k == 0 || k > dataset.n() {
        return Err(Error::Contract(format!(
            "k={k} outside [1, n={}]",
            dataset.n()
        )));
    }
    Ok(())
}

/// Euclidean distance from `q` to its k-th nearest database row (distances
/// sorted ascending, duplicates kept).
pub fn exact_knn_distance(dataset: &Dataset, k: usize, q: &QueryInstance) -> Result<f64> {
    check_k(dataset, k)?;
    if q.len() != dataset.d() {
        return Err(Error::DimensionMismatch {
            context: "exact_knn_distance query",
            expected: dataset.d(),
            actual: q.len(),
        });
    }
    let mut dists: Vec<f64> = dataset
        .rows()
        .map(|row| squared_distance(q.values(), row))
        .collect();
    let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(kth.sqrt())
}

/// The database row attaining the k-th smallest distance to `q`; distance
/// ties are broken by the lowest row index.
pub fn exact_knn_point(dataset: &Dataset, k: usize, q: &QueryInstance) -> Result<Vec<f64>> {
    check_k(dataset, k)?;
    if q.len() != dataset.d() {
        return Err(Error::DimensionMismatch {
            context: "exact_knn_point query",
            expected: dataset.d(),
            actual: q.len(),
        });
    }
    let mut dists: Vec<(f64, usize)> = dataset
        .rows()
        .enumerate()
        .map(|(i, row)| (squared_distance(q.values(), row), i))
        .collect();
    let (_, &mut (_, idx), _) =
        dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(dataset.row(idx).to_vec())
}

/// Exact label for one query under any query-function variant. `None` marks
/// an `Empty` aggregate; callers drop such queries from training and test
/// sets.
pub fn label_for(
    dataset: &Dataset,
    spec: &QueryFunctionSpec,
    q: &QueryInstance,
) -> Result<Option<Vec<f64>>> {
    match &spec.variant {
        QueryVariant::Raq { .. } => Ok(exact_raq(dataset, spec, q)?.value().map(|v| vec![v])),
        QueryVariant::KnnDistance { k, .. } => {
            Ok(Some(vec![exact_knn_distance(dataset, *k, q)?]))
        }
        QueryVariant::KnnPoint { k, .. } => Ok(Some(exact_knn_point(dataset, *k, q)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AggKind, Aggregation, PredicateSpec};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn small_dataset() -> Dataset {
        Dataset::from_rows(vec![vec![1.0, 4.0], vec![2.0, 7.0], vec![3.0, 6.0]]).unwrap()
    }

    fn line_dataset() -> Dataset {
        Dataset::from_rows(vec![vec![1.0], vec![2.0], vec![3.0], vec![5.0], vec![6.0]]).unwrap()
    }

    fn raq_spec(kind: AggKind) -> QueryFunctionSpec {
        QueryFunctionSpec::raq(
            PredicateSpec::AxisRange { active: vec![0] },
            Aggregation {
                kind,
                measure_attribute: 1,
            },
        )
    }

    fn q(values: &[f64]) -> QueryInstance {
        QueryInstance::new(values.to_vec()).unwrap()
    }

    #[test]
    fn avg_over_matching_rows() {
        let ds = small_dataset();
        // rows (1,4) and (2,7) fall in [0,3)
        let result = exact_raq(&ds, &raq_spec(AggKind::Avg), &q(&[0.0, 3.0])).unwrap();
        assert_eq!(result, OracleResult::Value(5.5));
    }

    #[test]
    fn count_over_full_domain_is_n() {
        let ds = small_dataset();
        let result = exact_raq(&ds, &raq_spec(AggKind::Count), &q(&[0.0, 10.0])).unwrap();
        assert_eq!(result, OracleResult::Value(3.0));
    }

    #[test]
    fn empty_range_yields_empty_for_avg() {
        let ds = small_dataset();
        let result = exact_raq(&ds, &raq_spec(AggKind::Avg), &q(&[10.0, 11.0])).unwrap();
        assert_eq!(result, OracleResult::Empty);
        // ...but zero for COUNT and SUM
        let count = exact_raq(&ds, &raq_spec(AggKind::Count), &q(&[10.0, 11.0])).unwrap();
        assert_eq!(count, OracleResult::Value(0.0));
        let sum = exact_raq(&ds, &raq_spec(AggKind::Sum), &q(&[10.0, 11.0])).unwrap();
        assert_eq!(sum, OracleResult::Value(0.0));
    }

    #[test]
    fn median_of_odd_set() {
        let ds = small_dataset();
        // all three rows match; measure values {4,7,6} sorted -> middle 6
        let result = exact_raq(&ds, &raq_spec(AggKind::Median), &q(&[0.0, 4.0])).unwrap();
        assert_eq!(result, OracleResult::Value(6.0));
    }

    #[test]
    fn median_of_even_set_averages_middles() {
        let ds = small_dataset();
        // rows (1,4) and (3,6) via a group-free range [0,4) minus... use [1,4) over attr 0
        // rows with attr0 in [2,4): (2,7),(3,6) -> median (6+7)/2
        let result = exact_raq(&ds, &raq_spec(AggKind::Median), &q(&[2.0, 4.0])).unwrap();
        assert_eq!(result, OracleResult::Value(6.5));
    }

    #[test]
    fn std_is_population() {
        let ds = small_dataset();
        // all rows: values {4,7,6}, mean 17/3, population var = sum((v-m)^2)/3
        let m = 17.0 / 3.0;
        let var = ((4.0 - m) * (4.0 - m) + (7.0 - m) * (7.0 - m) + (6.0 - m) * (6.0 - m)) / 3.0;
        let result = exact_raq(&ds, &raq_spec(AggKind::Std), &q(&[0.0, 4.0])).unwrap();
        let got = result.value().unwrap();
        assert!((got - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn knn_distance_examples() {
        let ds = line_dataset();
        assert_eq!(exact_knn_distance(&ds, 1, &q(&[4.0])).unwrap(), 1.0);
        assert_eq!(exact_knn_distance(&ds, 1, &q(&[3.0])).unwrap(), 0.0);
        // distances from 4: {3,2,1,1,2} sorted {1,1,2,2,3}; 3rd smallest = 2
        assert_eq!(exact_knn_distance(&ds, 3, &q(&[4.0])).unwrap(), 2.0);
    }

    #[test]
    fn knn_distance_rejects_bad_k() {
        let ds = line_dataset();
        assert!(exact_knn_distance(&ds, 0, &q(&[4.0])).is_err());
        assert!(exact_knn_distance(&ds, 6, &q(&[4.0])).is_err());
    }

    #[test]
    fn knn_point_breaks_ties_by_row_index() {
        let ds = line_dataset();
        // 3 and 5 are both at distance 1 from 4; row index of 3 is lower
        assert_eq!(exact_knn_point(&ds, 1, &q(&[4.0])).unwrap(), vec![3.0]);
        assert_eq!(exact_knn_point(&ds, 1, &q(&[0.0])).unwrap(), vec![1.0]);
        // distances from 4.6: (3.6, 2.6, 1.6, 0.4, 1.4); 2nd smallest is 6
        assert_eq!(exact_knn_point(&ds, 2, &q(&[4.6])).unwrap(), vec![6.0]);
    }

    #[test]
    fn knn_distance_monotone_in_k() {
        let mut rng = StdRng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ds = Dataset::from_rows(rows).unwrap();
        for _ in 0..20 {
            let query = q(&[
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]);
            let mut prev = 0.0;
            for k in 1..=ds.n() {
                let dist = exact_knn_distance(&ds, k, &query).unwrap();
                assert!(dist >= prev, "distance must be non-decreasing in k");
                prev = dist;
            }
        }
    }

    #[test]
    fn nearest_distance_is_lipschitz_in_query() {
        let mut rng = StdRng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..128)
            .map(|_| (0..2).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let ds = Dataset::from_rows(rows).unwrap();
        for _ in 0..200 {
            let a = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let b = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let da = exact_knn_distance(&ds, 1, &q(&a)).unwrap();
            let db = exact_knn_distance(&ds, 1, &q(&b)).unwrap();
            let gap = squared_distance(&a, &b).sqrt();
            assert!(
                (da - db).abs() <= gap + 1e-12,
                "1-NN distance must be 1-Lipschitz"
            );
        }
    }

    #[test]
    fn label_for_drops_empty_aggregates() {
        let ds = small_dataset();
        assert_eq!(
            label_for(&ds, &raq_spec(AggKind::Avg), &q(&[10.0, 11.0])).unwrap(),
            None
        );
        assert_eq!(
            label_for(&ds, &raq_spec(AggKind::Avg), &q(&[0.0, 3.0])).unwrap(),
            Some(vec![5.5])
        );
    }
}
