//! Hyperparameter grid search under time and space ceilings.
//!
//! One partition stands in for the whole engine: the tree is built at the
//! candidate height, the most populated leaf is selected, its samples are
//! split into fit and validation halves, and a single model is trained and
//! scored. Feasibility uses the full engine's parameter count and the
//! measured single-model query time.

use crate::data::Workload;
use crate::error::{Error, Result};
use crate::index::build_index;
use crate::metrics;
use crate::mlp::{self, MlpArchitecture, TrainConfig};
use std::time::{Duration, Instant};

/// One grid candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridPoint {
    pub height: u32,
    pub n_layers: usize,
    pub first_width: usize,
    pub rest_width: usize,
}

/// Problem ceilings: maximum total parameters (space, `s`) and maximum mean
/// per-query time (`t`). `None` means unconstrained.
#[derive(Debug, Clone, Copy, Default)]
pub struct GridLimits {
    pub max_params: Option<usize>,
    pub max_query_time: Option<Duration>,
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub point: GridPoint,
    pub validation_error: f64,
    pub total_params: usize,
    pub mean_query_ns: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub best: GridPoint,
    pub best_row: GridRow,
    pub rows: Vec<GridRow>,
}

/// Scores every candidate and returns the accuracy-maximizing feasible one,
/// ties broken by smaller parameter count. Fails with an infeasibility
/// report when no candidate meets the ceilings.
pub fn grid_search(
    train: &Workload,
    grid: &[GridPoint],
    limits: GridLimits,
    train_config: &TrainConfig,
    validation_fraction: f64,
) -> Result<GridSearchOutcome> {
    if grid.is_empty() {
        return Err(Error::Contract("grid search needs a non-empty grid".into()));
    }
    let labels = train
        .labels
        .as_ref()
        .ok_or_else(|| Error::Contract("grid search needs a labeled workload".into()))?;
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::Contract("validation fraction must be in (0, 1)".into()));
    }

    let d_pred = train.spec.d_pred();
    let output_dim = train.spec.output_dim();
    let mut rows = Vec::with_capacity(grid.len());

    for point in grid {
        let arch = MlpArchitecture::new(
            d_pred,
            point.n_layers,
            point.first_width,
            point.rest_width,
            output_dim,
        )?;
        let built = build_index(&train.queries, point.height)?;
        // The paper's heuristic trains one representative partition; take
        // the most populated leaf (lowest id on ties).
        let leaf = built
            .leaf_queries
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("at least one leaf");
        let members = &built.leaf_queries[leaf];
        let n_val = ((members.len() as f64 * validation_fraction).round() as usize)
            .clamp(1, members.len() - 1);
        let (val_members, fit_members) = members.split_at(n_val);

        let fit_inputs: Vec<&[f64]> = fit_members
            .iter()
            .map(|&i| train.queries[i].values())
            .collect();
        let fit_labels: Vec<&[f64]> = fit_members.iter().map(|&i| labels[i].as_slice()).collect();
        let run = mlp::train(&arch, train_config, &fit_inputs, &fit_labels)?;

        let truth: Vec<f64> = val_members.iter().map(|&i| labels[i][0]).collect();
        let predicted: Vec<f64> = val_members
            .iter()
            .map(|&i| run.mlp.forward(train.queries[i].values())[0])
            .collect();
        let validation_error = metrics::normalized_abs_error(&truth, &predicted)?;

        // Measured forward time on the validation queries (tree descent is
        // a handful of comparisons and vanishes next to the forward pass).
        for &i in val_members.iter().take(50) {
            std::hint::black_box(run.mlp.forward(train.queries[i].values()));
        }
        let start = Instant::now();
        let mut timed = 0u32;
        for &i in val_members.iter().cycle().take(val_members.len().max(200)) {
            std::hint::black_box(run.mlp.forward(train.queries[i].values()));
            timed += 1;
        }
        let mean_query_ns = start.elapsed().as_nanos() as f64 / timed as f64;

        let total_params = (1usize << point.height) * arch.param_count();
        let feasible = limits.max_params.is_none_or(|s| total_params <= s)
            && limits
                .max_query_time
                .is_none_or(|t| mean_query_ns <= t.as_nanos() as f64);
        rows.push(GridRow {
            point: *point,
            validation_error,
            total_params,
            mean_query_ns,
            feasible,
        });
    }

    let best_row = rows
        .iter()
        .filter(|r| r.feasible)
        .min_by(|a, b| {
            a.validation_error
                .total_cmp(&b.validation_error)
                .then(a.total_params.cmp(&b.total_params))
        })
        .cloned()
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "no grid candidate satisfies the ceilings (params <= {:?}, time <= {:?})",
                limits.max_params, limits.max_query_time
            ))
        })?;

    Ok(GridSearchOutcome {
        best: best_row.point,
        best_row,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::gen::{gen_gmm, gen_workload, label_workload, GmmSpec, WorkloadSpec};
    use crate::data::{AggKind, Aggregation};

    fn quick_workload() -> Workload {
        let ds = gen_gmm(&GmmSpec::new(2, 2000, 31)).unwrap();
        let wspec = WorkloadSpec::axis_range(1, 20.0, 600, 32);
        let w = gen_workload(
            &ds,
            &wspec,
            Aggregation {
                kind: AggKind::Count,
                measure_attribute: 0,
            },
        )
        .unwrap();
        label_workload(&ds, &w).unwrap().0
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            epochs: 60,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 3,
        }
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let w = quick_workload();
        let point = GridPoint {
            height: 1,
            n_layers: 3,
            first_width: 8,
            rest_width: 8,
        };
        let outcome =
            grid_search(&w, &[point], GridLimits::default(), &quick_config(), 0.2).unwrap();
        assert_eq!(outcome.best, point);
        assert_eq!(outcome.rows.len(), 1);
    }

    #[test]
    fn zero_time_ceiling_is_infeasible() {
        let w = quick_workload();
        let point = GridPoint {
            height: 0,
            n_layers: 2,
            first_width: 2,
            rest_width: 2,
        };
        let limits = GridLimits {
            max_params: None,
            max_query_time: Some(Duration::ZERO),
        };
        let err = grid_search(&w, &[point], limits, &quick_config(), 0.2).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn empty_grid_is_rejected() {
        let w = quick_workload();
        assert!(grid_search(&w, &[], GridLimits::default(), &quick_config(), 0.2).is_err());
    }

    #[test]
    fn ties_prefer_fewer_parameters() {
        // Two candidates, space ceiling excludes the larger one.
        let w = quick_workload();
        let small = GridPoint {
            height: 0,
            n_layers: 2,
            first_width: 4,
            rest_width: 4,
        };
        let large = GridPoint {
            height: 0,
            n_layers: 3,
            first_width: 64,
            rest_width: 64,
        };
        let small_params = MlpArchitecture::new(2, 2, 4, 4, 1).unwrap().param_count();
        let limits = GridLimits {
            max_params: Some(small_params),
            max_query_time: None,
        };
        let outcome = grid_search(&w, &[large, small], limits, &quick_config(), 0.2).unwrap();
        assert_eq!(outcome.best, small);
        assert_eq!(outcome.rows.iter().filter(|r| r.feasible).count(), 1);
    }
}
