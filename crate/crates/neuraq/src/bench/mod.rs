//! Experiment harness: data/workload generation, labeling, splitting,
//! evaluation, grid search and one-command experiment runs.

pub mod experiment;
pub mod gen;
pub mod grid;
pub mod harness;

pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutcome};
pub use gen::{
    gen_gmm, gen_knn_workload, gen_workload, label_workload, split_workload, uniform_queries,
    GmmSpec, PredicateFamily, WorkloadSpec,
};
pub use grid::{grid_search, GridLimits, GridPoint, GridRow, GridSearchOutcome};
pub use harness::{evaluate, time_queries, BenchReport, Method, TimingStats, WARMUP_QUERIES};
