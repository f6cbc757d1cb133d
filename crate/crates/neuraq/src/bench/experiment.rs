//! One-command experiment runs: parse a key-value config, execute
//! generate -> label -> split -> train -> evaluate, and emit CSV rows per
//! method. Partial results are flushed with a failure marker if a stage
//! fails.

use crate::bench::gen::{
    gen_gmm, gen_knn_workload, gen_workload, label_workload, split_workload, GmmSpec,
    PredicateFamily, WorkloadSpec,
};
use crate::bench::harness::{evaluate, BenchReport, Method};
use crate::data::{AggKind, Aggregation, Dataset, QueryFunctionSpec};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::io;
use crate::mlp::{MlpArchitecture, TrainConfig};
use crate::oracle::tree_agg_build;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Parsed experiment configuration. The file format is one `key = value`
/// pair per line; `#` starts a comment. Unknown keys are rejected.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pairs: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "data.source",
    "data.path",
    "data.n",
    "data.d",
    "data.components",
    "data.seed",
    "data.sigma-min",
    "data.sigma-max",
    "query.kind",
    "raq.aggregation",
    "raq.measure",
    "raq.predicate",
    "raq.active",
    "raq.range-pct",
    "raq.x-attr",
    "raq.y-attr",
    "group-by.attr",
    "group-by.value",
    "knn.k",
    "workload.n",
    "workload.seed",
    "split.train-fraction",
    "split.seed",
    "engine.height",
    "engine.layers",
    "engine.first",
    "engine.rest",
    "train.epochs",
    "train.batch",
    "train.lr",
    "train.seed",
    "tree-agg.fraction",
    "tree-agg.seed",
    "methods",
    "output.dir",
];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidInput(format!(
                    "config line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "config line {}: unknown key '{key}'",
                    lineno + 1
                )));
            }
            pairs.insert(key, value.trim().to_string());
        }
        Ok(ExperimentConfig { pairs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::InvalidInput(format!("config is missing '{key}'")))
    }

    fn parse_num<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::InvalidInput(format!("config '{key}': bad value '{v}'"))),
        }
    }

    /// Canonical one-line echo of every configured pair.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.pairs {
            let _ = write!(out, "{k}={v};");
        }
        out
    }
}

/// Everything a run produced, paired with the rows written to CSV.
pub struct ExperimentOutcome {
    pub reports: Vec<BenchReport>,
    pub results_csv: PathBuf,
}

fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match config.required("data.source")? {
        "gmm" => {
            let spec = GmmSpec {
                n_components: config.parse_num("data.components", 100)?,
                d: config.parse_num("data.d", 5)?,
                n: config.parse_num("data.n", 10_000)?,
                seed: config.parse_num("data.seed", 0)?,
                sigma_range: (
                    config.parse_num("data.sigma-min", 0.01)?,
                    config.parse_num("data.sigma-max", 0.1)?,
                ),
            };
            gen_gmm(&spec)
        }
        "csv" => {
            let path = config.required("data.path")?;
            Ok(io::read_dataset_csv(Path::new(path))?.0)
        }
        other => Err(Error::InvalidInput(format!(
            "data.source must be gmm or csv, got '{other}'"
        ))),
    }
}

fn build_knn_spec(config: &ExperimentConfig, dataset: &Dataset) -> Result<QueryFunctionSpec> {
    let kind = config.get("query.kind").unwrap_or("raq");
    let spec = match kind {
        "knn-distance" => {
            QueryFunctionSpec::knn_distance(config.parse_num("knn.k", 100)?, dataset.d())
        }
        "knn-point" => QueryFunctionSpec::knn_point(config.parse_num("knn.k", 100)?, dataset.d()),
        other => {
            return Err(Error::InvalidInput(format!(
                "expected a k-NN query kind, got '{other}'"
            )))
        }
    };
    Ok(spec)
}

fn parse_family(config: &ExperimentConfig) -> Result<PredicateFamily> {
    Ok(match config.get("raq.predicate").unwrap_or("axis-range") {
        "axis-range" => PredicateFamily::AxisRange,
        "half-space" => PredicateFamily::HalfSpace {
            x_attr: config.parse_num("raq.x-attr", 0)?,
            y_attr: config.parse_num("raq.y-attr", 1)?,
        },
        "rotated-rect" => PredicateFamily::RotatedRectangle {
            x_attr: config.parse_num("raq.x-attr", 0)?,
            y_attr: config.parse_num("raq.y-attr", 1)?,
        },
        other => {
            return Err(Error::InvalidInput(format!(
                "raq.predicate must be axis-range|half-space|rotated-rect, got '{other}'"
            )))
        }
    })
}

fn workload_spec(config: &ExperimentConfig) -> Result<WorkloadSpec> {
    Ok(WorkloadSpec {
        family: parse_family(config)?,
        active_count: config.parse_num("raq.active", 1)?,
        range_width_pct: config.parse_num("raq.range-pct", 10.0)?,
        n_queries: config.parse_num("workload.n", 11_000)?,
        seed: config.parse_num("workload.seed", 1)?,
        train_fraction: config.parse_num("split.train-fraction", 0.9)?,
    })
}

fn csv_header() -> &'static str {
    "method,task,n_rows,d,metric,mean_error,mean_norm_abs_error,mean_query_us,median_query_us,\
     p99_query_us,storage_bytes,test_queries,skipped,status,message"
}

fn report_row(report: &BenchReport, task: &str, n: usize, d: usize) -> String {
    let metric = match report.error.metric {
        crate::metrics::ErrorMetric::Relative => "relative",
        crate::metrics::ErrorMetric::NormalizedAbs => "norm-abs",
    };
    format!(
        "{},{task},{n},{d},{metric},{:.6},{:.6},{:.3},{:.3},{:.3},{},{},{},ok,",
        report.method,
        report.error.primary_error(),
        report.error.mean_normalized_abs_error,
        report.timing.mean_ns / 1000.0,
        report.timing.median_ns / 1000.0,
        report.timing.p99_ns / 1000.0,
        report.storage_bytes,
        report.error.count,
        report.skipped,
    )
}

/// Runs the configured experiment end to end and writes `results.csv` into
/// the output directory. On failure, rows produced so far are flushed with
/// a trailing `failed` marker row before the error is returned.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let results_csv = out_dir.join("results.csv");
    let mut rows: Vec<String> = Vec::new();
    let outcome = run_experiment_inner(config, &mut rows);
    let mut text = String::new();
    text.push_str(csv_header());
    text.push('\n');
    for row in &rows {
        text.push_str(row);
        text.push('\n');
    }
    if let Err(e) = &outcome {
        let _ = writeln!(text, ",,,,,,,,,,,,,failed,\"{e}\"");
    }
    std::fs::write(&results_csv, text)?;
    let reports = outcome?;
    Ok(ExperimentOutcome {
        reports,
        results_csv,
    })
}

fn run_experiment_inner(
    config: &ExperimentConfig,
    rows: &mut Vec<String>,
) -> Result<Vec<BenchReport>> {
    let dataset = load_dataset(config)?;
    let kind = config.get("query.kind").unwrap_or("raq");
    let task: String;

    let mut unlabeled = match kind {
        "raq" => {
            let aggregation = Aggregation {
                kind: AggKind::parse(config.get("raq.aggregation").unwrap_or("avg"))?,
                measure_attribute: config.parse_num("raq.measure", dataset.d() - 1)?,
            };
            let wspec = workload_spec(config)?;
            task = format!(
                "raq-{}-r{}-w{}",
                aggregation.kind.name(),
                wspec.active_count,
                wspec.range_width_pct
            );
            gen_workload(&dataset, &wspec, aggregation)?
        }
        "knn-distance" | "knn-point" => {
            let spec = build_knn_spec(config, &dataset)?;
            task = format!(
                "{kind}-k{}",
                match &spec.variant {
                    crate::data::QueryVariant::KnnDistance { k, .. }
                    | crate::data::QueryVariant::KnnPoint { k, .. } => *k,
                    _ => unreachable!(),
                }
            );
            gen_knn_workload(&dataset, spec)?
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "query.kind must be raq|knn-distance|knn-point, got '{other}'"
            )))
        }
    };
    if let Some(attr) = config.get("group-by.attr") {
        let attr: usize = attr
            .parse()
            .map_err(|_| Error::InvalidInput("bad group-by.attr".into()))?;
        let value: f64 = config.parse_num("group-by.value", 0.0)?;
        unlabeled.spec = unlabeled.spec.clone().with_group_by(attr, value);
    }

    let (labeled, dropped) = label_workload(&dataset, &unlabeled)?;
    if dropped > 0 {
        eprintln!("labeling dropped {dropped} empty-aggregate queries");
    }
    let train_fraction: f64 = config.parse_num("split.train-fraction", 0.9)?;
    let split_seed: u64 = config.parse_num("split.seed", 2)?;
    let (train, test) = split_workload(&labeled, train_fraction, split_seed)?;
    if test.len() < 1000 {
        eprintln!(
            "warning: {} test queries; timing statistics want >= 1000",
            test.len()
        );
    }

    let methods: Vec<String> = config
        .get("methods")
        .unwrap_or("neuraq,tree-agg,exact")
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();

    let mut engine: Option<Engine> = None;
    let mut tree_index = None;
    if methods.iter().any(|m| m == "neuraq") {
        let arch = MlpArchitecture::new(
            labeled.spec.d_pred(),
            config.parse_num("engine.layers", 5)?,
            config.parse_num("engine.first", 60)?,
            config.parse_num("engine.rest", 30)?,
            labeled.spec.output_dim(),
        )?;
        let train_config = TrainConfig {
            epochs: config.parse_num("train.epochs", 1000)?,
            batch_size: config.parse_num("train.batch", 256)?,
            learning_rate: config.parse_num("train.lr", 1e-3)?,
            seed: config.parse_num("train.seed", 3)?,
        };
        let height: u32 = config.parse_num("engine.height", 4)?;
        engine = Some(Engine::build(&train, height, &arch, &train_config)?);
    }
    if methods.iter().any(|m| m == "tree-agg") {
        tree_index = Some(tree_agg_build(
            &dataset,
            config.parse_num("tree-agg.fraction", 0.1)?,
            config.parse_num("tree-agg.seed", 4)?,
        )?);
    }

    let mut reports = Vec::new();
    for name in &methods {
        let method = match name.as_str() {
            "neuraq" => Method::Neural(engine.as_ref().expect("engine built")),
            "tree-agg" => Method::TreeAgg {
                index: tree_index.as_ref().expect("index built"),
                spec: &labeled.spec,
            },
            "exact" => Method::Exact {
                dataset: &dataset,
                spec: &labeled.spec,
            },
            other => {
                return Err(Error::InvalidInput(format!(
                    "methods must be among neuraq|tree-agg|exact, got '{other}'"
                )))
            }
        };
        let report = evaluate(&method, &test)?;
        rows.push(report_row(&report, &task, dataset.n(), dataset.d()));
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUICK: &str = "\
data.source = gmm
data.n = 800
data.d = 2
data.components = 10
data.seed = 5
raq.aggregation = avg
raq.measure = 1
raq.active = 1
raq.range-pct = 25
workload.n = 400
workload.seed = 6
split.train-fraction = 0.8
split.seed = 7
engine.height = 1
engine.layers = 3
engine.first = 8
engine.rest = 8
train.epochs = 40
train.batch = 64
train.seed = 8
tree-agg.fraction = 0.5
tree-agg.seed = 9
methods = neuraq,tree-agg,exact
";

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(ExperimentConfig::parse("data.source = gmm\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::parse("data.source\n").is_err());
    }

    #[test]
    fn config_ignores_comments_and_blanks() {
        let c = ExperimentConfig::parse("# comment\n\ndata.source = gmm # trailing\n").unwrap();
        assert_eq!(c.get("data.source"), Some("gmm"));
    }

    #[test]
    fn end_to_end_run_writes_one_row_per_method() {
        let config = ExperimentConfig::parse(QUICK).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_experiment(&config, dir.path()).unwrap();
        assert_eq!(outcome.reports.len(), 3);
        let text = std::fs::read_to_string(outcome.results_csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4); // header + 3 methods
        assert!(lines[1].starts_with("neuraq,"));
        assert!(lines[2].starts_with("tree-agg,"));
        assert!(lines[3].starts_with("exact,"));
        // exact scores zero against its own labels
        assert!(lines[3].contains(",0.000000,"));
    }

    #[test]
    fn reruns_are_identical_modulo_timing_columns() {
        let config = ExperimentConfig::parse(QUICK).unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = run_experiment(&config, dir_a.path()).unwrap();
        let b = run_experiment(&config, dir_b.path()).unwrap();
        let strip = |path: &Path| -> Vec<Vec<String>> {
            std::fs::read_to_string(path)
                .unwrap()
                .lines()
                .skip(1)
                .map(|l| {
                    l.split(',')
                        .enumerate()
                        // columns 7..=9 are the timing columns
                        .filter(|(i, _)| !(7..=9).contains(i))
                        .map(|(_, f)| f.to_string())
                        .collect()
                })
                .collect()
        };
        assert_eq!(strip(&a.results_csv), strip(&b.results_csv));
    }

    #[test]
    fn failures_leave_a_marker_row() {
        let config = ExperimentConfig::parse(
            "data.source = csv\ndata.path = /nonexistent/x.csv\n",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(run_experiment(&config, dir.path()).is_err());
        let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert!(text.lines().last().unwrap().contains("failed"));
    }
}
