//! neuraq: a learned engine for range aggregate and nearest-neighbour
//! distance queries.
//!
//! The engine partitions the query space with a kd-tree built from sampled
//! query instances and trains one small dense network per leaf on exact
//! oracle labels. Answering a query is a tree descent plus a single forward
//! pass; the original table is not touched. Exact linear-scan oracles and a
//! uniform-sampling baseline (`TREE-AGG`) provide ground truth and a
//! reference point, and the bench module reproduces the measurement
//! protocol: synthetic data, workload generation, labeling, training, grid
//! search and single-threaded latency reports.

pub mod bench;
pub mod data;
pub mod engine;
pub mod error;
pub mod index;
pub mod io;
pub mod metrics;
pub mod mlp;
pub mod oracle;

pub use error::{Error, Result};
