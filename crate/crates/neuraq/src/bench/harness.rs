//! Accuracy/latency evaluation harness. Timing is always single-threaded:
//! a warm-up pass over the first queries, then one timed call per query.

use crate::data::{Dataset, QueryFunctionSpec, QueryInstance, QueryVariant, Workload};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::metrics::{self, ErrorReport};
use crate::oracle::{self, SpatialIndex};
use std::time::{Duration, Instant};

/// Number of untimed warm-up answers before measurement starts.
pub const WARMUP_QUERIES: usize = 100;

/// Per-query wall-clock statistics in nanoseconds.
#[derive(Debug, Clone)]
pub struct TimingStats {
    pub mean_ns: f64,
    pub median_ns: f64,
    pub p99_ns: f64,
    pub count: usize,
}

impl TimingStats {
    pub fn mean(&self) -> Duration {
        Duration::from_nanos(self.mean_ns as u64)
    }
}

/// Times `f` once per query after `warmup` untimed calls (cycling through
/// the query set if it is shorter than the warm-up).
pub fn time_queries<F: FnMut(&QueryInstance)>(
    queries: &[QueryInstance],
    warmup: usize,
    mut f: F,
) -> TimingStats {
    assert!(!queries.is_empty(), "timing needs at least one query");
    for i in 0..warmup {
        f(&queries[i % queries.len()]);
    }
    let mut samples = Vec::with_capacity(queries.len());
    let total_start = Instant::now();
    for q in queries {
        let start = Instant::now();
        f(q);
        samples.push(start.elapsed().as_nanos() as f64);
    }
    let total = total_start.elapsed().as_nanos() as f64;
    samples.sort_by(f64::total_cmp);
    let count = samples.len();
    let p99_idx = ((count as f64 * 0.99).ceil() as usize).clamp(1, count) - 1;
    TimingStats {
        // The aggregate clock avoids paying one timer read per query in the
        // mean; percentiles come from per-query samples.
        mean_ns: total / count as f64,
        median_ns: samples[count / 2],
        p99_ns: samples[p99_idx],
        count,
    }
}

/// A method under evaluation: the learned engine, the sampling baseline, or
/// the exact scan itself.
pub enum Method<'a> {
    Neural(&'a Engine),
    TreeAgg {
        index: &'a SpatialIndex,
        spec: &'a QueryFunctionSpec,
    },
    Exact {
        dataset: &'a Dataset,
        spec: &'a QueryFunctionSpec,
    },
}

impl Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Neural(_) => "neuraq",
            Method::TreeAgg { .. } => "tree-agg",
            Method::Exact { .. } => "exact",
        }
    }

    pub fn storage_bytes(&self) -> u64 {
        match self {
            Method::Neural(e) => e.storage_bytes(),
            Method::TreeAgg { index, .. } => index.storage_bytes(),
            Method::Exact { dataset, .. } => dataset.storage_bytes(),
        }
    }

    /// Answers one query; `None` when the method's aggregate is undefined
    /// (possible for a sub-sampling baseline on a sparse range).
    pub fn answer(&self, q: &QueryInstance) -> Result<Option<Vec<f64>>> {
        match self {
            Method::Neural(e) => e.answer(q).map(Some),
            Method::TreeAgg { index, spec } => {
                Ok(oracle::tree_agg_query(index, spec, q)?.value().map(|v| vec![v]))
            }
            Method::Exact { dataset, spec } => oracle::label_for(dataset, spec, q),
        }
    }
}

/// Evaluation outcome for one method on one test workload.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub method: String,
    pub error: ErrorReport,
    pub timing: TimingStats,
    pub storage_bytes: u64,
    /// Queries the method could not answer (undefined aggregate).
    pub skipped: usize,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Runs the method over a labeled test workload: times every answer
/// single-threaded after a warm-up pass, then scores accuracy.
///
/// RAQs use the normalized absolute error. Distance-to-kNN uses the
/// relative error, falling back to the normalized absolute error for the
/// whole report when any true distance is zero (near-duplicate data).
/// k-NN point answers are scored by the relative error of their distances.
pub fn evaluate(method: &Method, test: &Workload) -> Result<BenchReport> {
    let labels = test
        .labels
        .as_ref()
        .ok_or_else(|| Error::Contract("evaluate needs a labeled test workload".into()))?;
    if test.is_empty() {
        return Err(Error::Contract("evaluate needs a non-empty test set".into()));
    }

    let mut answers: Vec<Option<Vec<f64>>> = Vec::with_capacity(test.len());
    let mut first_error: Option<Error> = None;
    let timing = time_queries(&test.queries, WARMUP_QUERIES, |q| {
        if first_error.is_none() {
            match method.answer(q) {
                Ok(a) => answers.push(a),
                Err(e) => first_error = Some(e),
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }
    // The warm-up already answered the leading queries; `answers` holds
    // warm-up plus timed answers in order, so keep the timed tail.
    let answers = &answers[answers.len() - test.len()..];

    let mut truth = Vec::with_capacity(test.len());
    let mut predicted = Vec::with_capacity(test.len());
    let mut skipped = 0usize;
    for ((q, label), answer) in test.queries.iter().zip(labels).zip(answers) {
        let Some(answer) = answer else {
            skipped += 1;
            continue;
        };
        match &test.spec.variant {
            QueryVariant::Raq { .. } | QueryVariant::KnnDistance { .. } => {
                truth.push(label[0]);
                predicted.push(answer[0]);
            }
            QueryVariant::KnnPoint { .. } => {
                truth.push(euclidean(label, q.values()));
                predicted.push(euclidean(answer, q.values()));
            }
        }
    }
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("method answered no test query"));
    }

    let normalized = metrics::per_query_normalized_abs_errors(&truth, &predicted)?;
    let relative = match &test.spec.variant {
        QueryVariant::KnnDistance { .. } | QueryVariant::KnnPoint { .. }
            if truth.iter().all(|t| *t > 0.0) =>
        {
            Some(
                truth
                    .iter()
                    .zip(&predicted)
                    .map(|(t, p)| metrics::relative_error(*t, *p))
                    .collect::<Result<Vec<f64>>>()?,
            )
        }
        _ => None,
    };

    Ok(BenchReport {
        method: method.name().to_string(),
        error: ErrorReport::new(normalized, relative, timing.mean()),
        timing,
        storage_bytes: method.storage_bytes(),
        skipped,
    })
}
