//! Domain data model: datasets, query functions, query instances and workloads.
//!
//! A query function maps a `d_pred`-dimensional query instance to an answer
//! over a fixed dataset. Everything here is immutable after construction and
//! safe to share across threads.

use crate::error::{Error, Result};

/// Inclusive value bounds of one attribute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub min: f64,
    pub max: f64,
}

impl Domain {
    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

/// An in-memory numeric table: `n` rows of `d` attributes, with per-attribute
/// domain bounds. Rows are stored flat in row-major order.
#[derive(Debug, Clone)]
pub struct Dataset {
    values: Vec<f64>,
    n: usize,
    d: usize,
    domains: Vec<Domain>,
}

impl Dataset {
    /// Builds a dataset from row-major values, deriving domains from the
    /// observed per-attribute min/max.
    pub fn from_flat(values: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("dataset needs d >= 1 attributes".into()));
        }
        if values.is_empty() || values.len() % d != 0 {
            return Err(Error::InvalidInput(format!(
                "dataset values length {} is not a positive multiple of d={}",
                values.len(),
                d
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite dataset value {v}")));
        }
        let n = values.len() / d;
        let mut domains = vec![
            Domain {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            };
            d
        ];
        for row in values.chunks_exact(d) {
            for (dom, &v) in domains.iter_mut().zip(row) {
                dom.min = dom.min.min(v);
                dom.max = dom.max.max(v);
            }
        }
        Ok(Dataset {
            values,
            n,
            d,
            domains,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("ragged rows in dataset".into()));
        }
        Self::from_flat(rows.into_iter().flatten().collect(), d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn domain(&self, attr: usize) -> Domain {
        self.domains[attr]
    }

    /// Raw storage footprint of the table, in bytes.
    pub fn storage_bytes(&self) -> u64 {
        (self.values.len() * std::mem::size_of::<f64>()) as u64
    }
}

/// One concrete query: the `d_pred`-dimensional parameter vector of a query
/// function. All values are finite; unbounded range endpoints are clamped to
/// the attribute domain before a query instance is built (see
/// [`clamp_axis_range_bounds`]).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryInstance {
    values: Vec<f64>,
}

impl QueryInstance {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite query instance value {v}"
            )));
        }
        Ok(QueryInstance { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Replaces infinite axis-range endpoints with finite sentinels: `-inf` maps
/// to the attribute minimum and `+inf` to the value just above the attribute
/// maximum, so the half-open range still covers rows at the maximum.
pub fn clamp_axis_range_bounds(bounds: &mut [f64], active: &[usize], domains: &[Domain]) {
    let r = active.len();
    assert_eq!(bounds.len(), 2 * r, "axis-range bounds need 2r values");
    for (slot, &attr) in active.iter().enumerate() {
        let dom = domains[attr];
        if bounds[slot] == f64::NEG_INFINITY {
            bounds[slot] = dom.min;
        }
        if bounds[r + slot] == f64::INFINITY {
            bounds[r + slot] = dom.max.next_up();
        }
    }
}

/// Aggregation functions applied to the matching row set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggKind {
    Count,
    Sum,
    Avg,
    Std,
    Median,
}

impl AggKind {
    pub fn name(&self) -> &'static str {
        match self {
            AggKind::Count => "count",
            AggKind::Sum => "sum",
            AggKind::Avg => "avg",
            AggKind::Std => "std",
            AggKind::Median => "median",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "count" => Ok(AggKind::Count),
            "sum" => Ok(AggKind::Sum),
            "avg" | "mean" => Ok(AggKind::Avg),
            "std" => Ok(AggKind::Std),
            "median" => Ok(AggKind::Median),
            other => Err(Error::InvalidInput(format!(
                "unknown aggregation '{other}' (expected count|sum|avg|std|median)"
            ))),
        }
    }
}

/// Aggregation kind plus the measure attribute it operates on. The measure
/// attribute is ignored for COUNT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregation {
    pub kind: AggKind,
    pub measure_attribute: usize,
}

/// A predicate family with its attribute bindings. Together with a query
/// instance it decides row membership.
#[derive(Debug, Clone, PartialEq)]
pub enum PredicateSpec {
    /// Half-open per-attribute ranges `lower_i <= row[a_i] < upper_i` over the
    /// listed active attributes. The query instance carries all lower bounds
    /// first, then all upper bounds, in active-attribute order.
    AxisRange { active: Vec<usize> },
    /// `row[y_attr] > row[x_attr] * q[0] + q[1]`: the half-space above a line.
    HalfSpace { x_attr: usize, y_attr: usize },
    /// Closed rectangle given by two opposite corners `(q[0],q[1])`,
    /// `(q[2],q[3])` rotated by `q[4]` radians about the rectangle center, in
    /// the plane of the two bound location attributes.
    RotatedRectangle { x_attr: usize, y_attr: usize },
}

impl PredicateSpec {
    pub fn d_pred(&self) -> usize {
        match self {
            PredicateSpec::AxisRange { active } => 2 * active.len(),
            PredicateSpec::HalfSpace { .. } => 2,
            PredicateSpec::RotatedRectangle { .. } => 5,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let check_attr = |a: usize| {
            if a >= d {
                Err(Error::Contract(format!(
                    "predicate binds attribute {a} but dataset has d={d}"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            PredicateSpec::AxisRange { active } => {
                if active.is_empty() {
                    return Err(Error::Contract("axis range needs >= 1 active attribute".into()));
                }
                let mut seen = vec![false; d];
                for &a in active {
                    check_attr(a)?;
                    if seen[a] {
                        return Err(Error::Contract(format!("duplicate active attribute {a}")));
                    }
                    seen[a] = true;
                }
                Ok(())
            }
            PredicateSpec::HalfSpace { x_attr, y_attr }
            | PredicateSpec::RotatedRectangle { x_attr, y_attr } => {
                check_attr(*x_attr)?;
                check_attr(*y_attr)?;
                if x_attr == y_attr {
                    return Err(Error::Contract("predicate binds the same attribute twice".into()));
                }
                Ok(())
            }
        }
    }
}

/// Evaluates a predicate for one row. Deterministic and total on well-formed
/// inputs; rejects dimension mismatches.
pub fn evaluate_predicate(spec: &PredicateSpec, q: &QueryInstance, row: &[f64]) -> Result<bool> {
    if q.len() != spec.d_pred() {
        return Err(Error::DimensionMismatch {
            context: "evaluate_predicate query",
            expected: spec.d_pred(),
            actual: q.len(),
        });
    }
    let qv = q.values();
    match spec {
        PredicateSpec::AxisRange { active } => {
            let r = active.len();
            for (slot, &attr) in active.iter().enumerate() {
                if attr >= row.len() {
                    return Err(Error::DimensionMismatch {
                        context: "evaluate_predicate row",
                        expected: attr + 1,
                        actual: row.len(),
                    });
                }
                let v = row[attr];
                if v < qv[slot] || v >= qv[r + slot] {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        PredicateSpec::HalfSpace { x_attr, y_attr } => {
            let needed = (*x_attr).max(*y_attr) + 1;
            if row.len() < needed {
                return Err(Error::DimensionMismatch {
                    context: "evaluate_predicate row",
                    expected: needed,
                    actual: row.len(),
                });
            }
            Ok(row[*y_attr] > row[*x_attr] * qv[0] + qv[1])
        }
        PredicateSpec::RotatedRectangle { x_attr, y_attr } => {
            let needed = (*x_attr).max(*y_attr) + 1;
            if row.len() < needed {
                return Err(Error::DimensionMismatch {
                    context: "evaluate_predicate row",
                    expected: needed,
                    actual: row.len(),
                });
            }
            let (p1x, p1y, p2x, p2y, phi) = (qv[0], qv[1], qv[2], qv[3], qv[4]);
            let (cx, cy) = ((p1x + p2x) / 2.0, (p1y + p2y) / 2.0);
            let (half_w, half_h) = ((p2x - p1x).abs() / 2.0, (p2y - p1y).abs() / 2.0);
            // Rotate the point by -phi about the center, then test the
            // axis-aligned rectangle (closed on all edges).
            let (dx, dy) = (row[*x_attr] - cx, row[*y_attr] - cy);
            let (cos, sin) = (phi.cos(), phi.sin());
            let local_x = dx * cos + dy * sin;
            let local_y = -dx * sin + dy * cos;
            Ok(local_x.abs() <= half_w && local_y.abs() <= half_h)
        }
    }
}

/// The query-function variant: which family of queries a model answers.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryVariant {
    Raq {
        predicate: PredicateSpec,
        aggregation: Aggregation,
    },
    /// Distance from the query point to its k-th nearest database row.
    KnnDistance { k: usize, d: usize },
    /// The k-th nearest database row itself.
    KnnPoint { k: usize, d: usize },
}

/// Declares one query function: variant, input dimensionality, output
/// dimensionality and an optional group-by restriction conjoined to the
/// predicate (`row[attr] == value`).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFunctionSpec {
    pub variant: QueryVariant,
    pub group_by: Option<(usize, f64)>,
}

impl QueryFunctionSpec {
    pub fn raq(predicate: PredicateSpec, aggregation: Aggregation) -> Self {
        QueryFunctionSpec {
            variant: QueryVariant::Raq {
                predicate,
                aggregation,
            },
            group_by: None,
        }
    }

    pub fn knn_distance(k: usize, d: usize) -> Self {
        QueryFunctionSpec {
            variant: QueryVariant::KnnDistance { k, d },
            group_by: None,
        }
    }

    pub fn knn_point(k: usize, d: usize) -> Self {
        QueryFunctionSpec {
            variant: QueryVariant::KnnPoint { k, d },
            group_by: None,
        }
    }

    pub fn with_group_by(mut self, attr: usize, value: f64) -> Self {
        self.group_by = Some((attr, value));
        self
    }

    pub fn d_pred(&self) -> usize {
        match &self.variant {
            QueryVariant::Raq { predicate, .. } => predicate.d_pred(),
            QueryVariant::KnnDistance { d, .. } | QueryVariant::KnnPoint { d, .. } => *d,
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.variant {
            QueryVariant::Raq { .. } | QueryVariant::KnnDistance { .. } => 1,
            QueryVariant::KnnPoint { d, .. } => *d,
        }
    }

    pub fn validate_for(&self, dataset: &Dataset) -> Result<()> {
        match &self.variant {
            QueryVariant::Raq {
                predicate,
                aggregation,
            } => {
                predicate.validate(dataset.d())?;
                if aggregation.kind != AggKind::Count
                    && aggregation.measure_attribute >= dataset.d()
                {
                    return Err(Error::Contract(format!(
                        "measure attribute {} out of range (d={})",
                        aggregation.measure_attribute,
                        dataset.d()
                    )));
                }
            }
            QueryVariant::KnnDistance { k, d } | QueryVariant::KnnPoint { k, d } => {
                if *k == 0 {
                    return Err(Error::Contract("k must be >= 1".into()));
                }
                if *k > dataset.n() {
                    return Err(Error::Contract(format!(
                        "k={k} exceeds dataset size n={}",
                        dataset.n()
                    )));
                }
                if *d != dataset.d() {
                    return Err(Error::DimensionMismatch {
                        context: "knn spec dimensionality",
                        expected: dataset.d(),
                        actual: *d,
                    });
                }
            }
        }
        if let Some((attr, _)) = self.group_by {
            if attr >= dataset.d() {
                return Err(Error::Contract(format!(
                    "group-by attribute {attr} out of range (d={})",
                    dataset.d()
                )));
            }
        }
        Ok(())
    }

    /// Full row-membership test: the predicate conjoined with the group-by
    /// equality when present. Only meaningful for the RAQ variant.
    pub fn matches_row(&self, q: &QueryInstance, row: &[f64]) -> Result<bool> {
        let QueryVariant::Raq { predicate, .. } = &self.variant else {
            return Err(Error::Contract("matches_row requires an RAQ spec".into()));
        };
        if let Some((attr, value)) = self.group_by {
            if row[attr] != value {
                return Ok(false);
            }
        }
        evaluate_predicate(predicate, q, row)
    }
}

/// A set of query instances for one query function, optionally carrying
/// ground-truth labels (one `output_dim`-length row per query).
#[derive(Debug, Clone)]
pub struct Workload {
    pub spec: QueryFunctionSpec,
    pub queries: Vec<QueryInstance>,
    pub labels: Option<Vec<Vec<f64>>>,
}

impl Workload {
    pub fn new(
        spec: QueryFunctionSpec,
        queries: Vec<QueryInstance>,
        labels: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let d_pred = spec.d_pred();
        for q in &queries {
            if q.len() != d_pred {
                return Err(Error::DimensionMismatch {
                    context: "workload query",
                    expected: d_pred,
                    actual: q.len(),
                });
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != queries.len() {
                return Err(Error::DimensionMismatch {
                    context: "workload labels",
                    expected: queries.len(),
                    actual: labels.len(),
                });
            }
            let out = spec.output_dim();
            for l in labels {
                if l.len() != out {
                    return Err(Error::DimensionMismatch {
                        context: "workload label row",
                        expected: out,
                        actual: l.len(),
                    });
                }
                if let Some(v) = l.iter().find(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!("non-finite label {v}")));
                }
            }
        }
        Ok(Workload {
            spec,
            queries,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(values: &[f64]) -> QueryInstance {
        QueryInstance::new(values.to_vec()).unwrap()
    }

    #[test]
    fn axis_range_is_half_open() {
        let spec = PredicateSpec::AxisRange { active: vec![0] };
        assert!(evaluate_predicate(&spec, &q(&[0.0, 3.0]), &[2.0, 9.0]).unwrap());
        // upper bound exclusive
        assert!(!evaluate_predicate(&spec, &q(&[0.0, 3.0]), &[3.0, 9.0]).unwrap());
        // lower bound inclusive
        assert!(evaluate_predicate(&spec, &q(&[0.0, 3.0]), &[0.0, 9.0]).unwrap());
    }

    #[test]
    fn half_space_above_line() {
        let spec = PredicateSpec::HalfSpace {
            x_attr: 0,
            y_attr: 1,
        };
        // 5 > 2*1 + 0
        assert!(evaluate_predicate(&spec, &q(&[1.0, 0.0]), &[2.0, 5.0]).unwrap());
        assert!(!evaluate_predicate(&spec, &q(&[1.0, 0.0]), &[2.0, 2.0]).unwrap());
    }

    #[test]
    fn rotated_rectangle_axis_aligned_case() {
        let spec = PredicateSpec::RotatedRectangle {
            x_attr: 0,
            y_attr: 1,
        };
        assert!(evaluate_predicate(&spec, &q(&[0.0, 0.0, 2.0, 2.0, 0.0]), &[1.0, 1.0]).unwrap());
        assert!(!evaluate_predicate(&spec, &q(&[0.0, 0.0, 2.0, 2.0, 0.0]), &[3.0, 1.0]).unwrap());
        // rectangle edges are closed
        assert!(evaluate_predicate(&spec, &q(&[0.0, 0.0, 2.0, 2.0, 0.0]), &[2.0, 2.0]).unwrap());
    }

    #[test]
    fn rotated_rectangle_quarter_turn() {
        let spec = PredicateSpec::RotatedRectangle {
            x_attr: 0,
            y_attr: 1,
        };
        // A 4x2 rectangle centered at the origin, rotated 90 degrees: it now
        // spans x in [-1,1], y in [-2,2].
        let query = q(&[-2.0, -1.0, 2.0, 1.0, std::f64::consts::FRAC_PI_2]);
        assert!(evaluate_predicate(&spec, &query, &[0.0, 1.8]).unwrap());
        assert!(!evaluate_predicate(&spec, &query, &[1.8, 0.0]).unwrap());
    }

    #[test]
    fn predicate_rejects_dimension_mismatch() {
        let spec = PredicateSpec::AxisRange { active: vec![0, 1] };
        let err = evaluate_predicate(&spec, &q(&[0.0, 1.0]), &[0.5, 0.5]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn full_range_identity_matches_every_row() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![i as f64 / 7.0, (i * i) as f64 / 100.0])
            .collect();
        let ds = Dataset::from_rows(rows).unwrap();
        let spec = PredicateSpec::AxisRange { active: vec![0, 1] };
        let mut bounds = vec![
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::INFINITY,
        ];
        clamp_axis_range_bounds(&mut bounds, &[0, 1], ds.domains());
        let query = QueryInstance::new(bounds).unwrap();
        for row in ds.rows() {
            assert!(evaluate_predicate(&spec, &query, row).unwrap());
        }
    }

    #[test]
    fn rotated_rectangle_at_zero_angle_agrees_with_axis_range() {
        // Exhaustive 10x10 grid; corners chosen off-grid so the closed/half-open
        // edge difference cannot fire.
        let axis = PredicateSpec::AxisRange { active: vec![0, 1] };
        let rect = PredicateSpec::RotatedRectangle {
            x_attr: 0,
            y_attr: 1,
        };
        let (lx, ly, ux, uy) = (1.5, 2.5, 6.5, 8.5);
        let axis_q = q(&[lx, ly, ux, uy]);
        let rect_q = q(&[lx, ly, ux, uy, 0.0]);
        for gx in 0..10 {
            for gy in 0..10 {
                let row = [gx as f64, gy as f64];
                assert_eq!(
                    evaluate_predicate(&axis, &axis_q, &row).unwrap(),
                    evaluate_predicate(&rect, &rect_q, &row).unwrap(),
                    "disagreement at {row:?}"
                );
            }
        }
    }

    #[test]
    fn group_by_restricts_matches() {
        let agg = Aggregation {
            kind: AggKind::Count,
            measure_attribute: 0,
        };
        let spec = QueryFunctionSpec::raq(PredicateSpec::AxisRange { active: vec![0] }, agg)
            .with_group_by(1, 2.0);
        let query = q(&[0.0, 10.0]);
        assert!(spec.matches_row(&query, &[5.0, 2.0]).unwrap());
        assert!(!spec.matches_row(&query, &[5.0, 3.0]).unwrap());
    }

    #[test]
    fn dataset_rejects_bad_input() {
        assert!(Dataset::from_flat(vec![], 2).is_err());
        assert!(Dataset::from_flat(vec![1.0, 2.0, 3.0], 2).is_err());
        assert!(Dataset::from_flat(vec![1.0, f64::NAN], 2).is_err());
        assert!(Dataset::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn dataset_domains_are_observed_bounds() {
        let ds = Dataset::from_rows(vec![vec![1.0, 4.0], vec![2.0, 7.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.domain(0), Domain { min: 1.0, max: 3.0 });
        assert_eq!(ds.domain(1), Domain { min: 4.0, max: 7.0 });
    }

    #[test]
    fn workload_label_shape_is_checked() {
        let agg = Aggregation {
            kind: AggKind::Avg,
            measure_attribute: 1,
        };
        let spec = QueryFunctionSpec::raq(PredicateSpec::AxisRange { active: vec![0] }, agg);
        let queries = vec![q(&[0.0, 1.0]), q(&[1.0, 2.0])];
        assert!(Workload::new(spec.clone(), queries.clone(), Some(vec![vec![1.0]])).is_err());
        assert!(Workload::new(
            spec.clone(),
            queries.clone(),
            Some(vec![vec![1.0, 2.0], vec![3.0]])
        )
        .is_err());
        assert!(Workload::new(spec, queries, Some(vec![vec![1.0], vec![2.0]])).is_ok());
    }

    #[test]
    fn query_instance_rejects_non_finite() {
        assert!(QueryInstance::new(vec![f64::INFINITY]).is_err());
        assert!(QueryInstance::new(vec![f64::NAN]).is_err());
    }
}
