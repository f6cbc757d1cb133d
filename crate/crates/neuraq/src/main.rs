//! Command-line front end: data/workload generation, labeling, training,
//! querying, evaluation, grid search and whole-experiment runs.

use clap::{Args, Parser, Subcommand};
use neuraq::bench::{
    self, evaluate, grid_search, GmmSpec, GridLimits, GridPoint, Method, PredicateFamily,
    WorkloadSpec,
};
use neuraq::data::{AggKind, Aggregation, Dataset, QueryFunctionSpec, Workload};
use neuraq::engine::Engine;
use neuraq::error::{Error, Result};
use neuraq::index::choose_height;
use neuraq::io;
use neuraq::mlp::{MlpArchitecture, TrainConfig};
use neuraq::oracle::tree_agg_build;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "neuraq",
    version,
    about = "Learned engine for range aggregate and nearest-neighbour distance queries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SpecArgs {
    /// Query kind: raq | knn-distance | knn-point
    #[arg(long, default_value = "raq")]
    kind: String,
    /// Aggregation for RAQs: count | sum | avg | std | median
    #[arg(long, default_value = "avg")]
    agg: String,
    /// Measure attribute index (defaults to the last attribute)
    #[arg(long)]
    measure: Option<usize>,
    /// Predicate family: axis-range | half-space | rotated-rect
    #[arg(long, default_value = "axis-range")]
    predicate: String,
    /// Active attribute indices for axis-range, comma separated (e.g. 0,2)
    #[arg(long, value_delimiter = ',')]
    active: Vec<usize>,
    /// First location attribute for half-space / rotated-rect
    #[arg(long, default_value_t = 0)]
    x_attr: usize,
    /// Second location attribute for half-space / rotated-rect
    #[arg(long, default_value_t = 1)]
    y_attr: usize,
    /// k for the k-NN query kinds
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Group-by attribute index (optional)
    #[arg(long)]
    group_by_attr: Option<usize>,
    /// Group-by category value
    #[arg(long, default_value_t = 0.0)]
    group_by_value: f64,
}

impl SpecArgs {
    fn resolve(&self, dataset: &Dataset) -> Result<QueryFunctionSpec> {
        let mut spec = match self.kind.as_str() {
            "raq" => {
                let aggregation = Aggregation {
                    kind: AggKind::parse(&self.agg)?,
                    measure_attribute: self.measure.unwrap_or(dataset.d() - 1),
                };
                let predicate = match self.predicate.as_str() {
                    "axis-range" => {
                        if self.active.is_empty() {
                            return Err(Error::InvalidInput(
                                "axis-range needs --active (e.g. --active 0,2)".into(),
                            ));
                        }
                        neuraq::data::PredicateSpec::AxisRange {
                            active: self.active.clone(),
                        }
                    }
                    "half-space" => neuraq::data::PredicateSpec::HalfSpace {
                        x_attr: self.x_attr,
                        y_attr: self.y_attr,
                    },
                    "rotated-rect" => neuraq::data::PredicateSpec::RotatedRectangle {
                        x_attr: self.x_attr,
                        y_attr: self.y_attr,
                    },
                    other => {
                        return Err(Error::InvalidInput(format!(
                            "unknown predicate '{other}'"
                        )))
                    }
                };
                QueryFunctionSpec::raq(predicate, aggregation)
            }
            "knn-distance" => QueryFunctionSpec::knn_distance(self.k, dataset.d()),
            "knn-point" => QueryFunctionSpec::knn_point(self.k, dataset.d()),
            other => return Err(Error::InvalidInput(format!("unknown kind '{other}'"))),
        };
        if let Some(attr) = self.group_by_attr {
            spec = spec.with_group_by(attr, self.group_by_value);
        }
        spec.validate_for(dataset)?;
        Ok(spec)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// kd-tree height; omit to derive from --capacity
    #[arg(long)]
    height: Option<u32>,
    /// Per-model capacity c; used as h = max(0, ceil(log2(n/c))) when
    /// --height is not given
    #[arg(long)]
    capacity: Option<usize>,
    /// Total network layers (first + rest hidden layers + linear output)
    #[arg(long, default_value_t = 5)]
    layers: usize,
    /// Units in the first hidden layer
    #[arg(long, default_value_t = 60)]
    first: usize,
    /// Units in the remaining hidden layers
    #[arg(long, default_value_t = 30)]
    rest: usize,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn height_for(&self, n_train: usize) -> Result<u32> {
        match (self.height, self.capacity) {
            (Some(h), _) => Ok(h),
            (None, Some(c)) => choose_height(n_train, c),
            (None, None) => Ok(4),
        }
    }

    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-mixture dataset CSV
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        d: usize,
        #[arg(long, default_value_t = 100)]
        components: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        sigma_min: f64,
        #[arg(long, default_value_t = 0.1)]
        sigma_max: f64,
    },
    /// Generate an unlabeled workload CSV for a dataset
    GenQueries {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        /// Number of active attributes to draw when --active is not given
        #[arg(long, default_value_t = 1)]
        active_count: usize,
        /// Range width as a percentage of each active attribute's domain
        #[arg(long, default_value_t = 10.0)]
        range_pct: f64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attach exact oracle labels to a workload CSV
    Label {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Train an engine from a labeled workload CSV
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Engine file to write
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Answer queries with a trained engine
    Query {
        #[arg(long)]
        engine: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Answers CSV to write (one row per query)
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate methods on a labeled test workload
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Engine file (required when methods include neuraq)
        #[arg(long)]
        engine: Option<PathBuf>,
        /// Comma-separated methods: neuraq,tree-agg,exact
        #[arg(long, default_value = "exact")]
        methods: String,
        #[arg(long, default_value_t = 0.1)]
        tree_agg_fraction: f64,
        #[arg(long, default_value_t = 0)]
        tree_agg_seed: u64,
        /// Report CSV to write
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Run a whole experiment from a key-value config file
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search hyperparameters under time/space ceilings
    GridSearch {
        #[arg(long)]
        data: PathBuf,
        /// Labeled workload CSV
        #[arg(long)]
        queries: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        /// Candidate kd-tree heights, comma separated
        #[arg(long, value_delimiter = ',', default_value = "0,4")]
        heights: Vec<u32>,
        /// Candidate layer counts
        #[arg(long, value_delimiter = ',', default_value = "5")]
        layers: Vec<usize>,
        /// Candidate first-layer widths
        #[arg(long, value_delimiter = ',', default_value = "60")]
        first: Vec<usize>,
        /// Candidate rest-layer widths
        #[arg(long, value_delimiter = ',', default_value = "30")]
        rest: Vec<usize>,
        /// Space ceiling: maximum total parameters
        #[arg(long)]
        max_params: Option<usize>,
        /// Time ceiling: maximum mean per-query microseconds
        #[arg(long)]
        max_query_us: Option<f64>,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
        /// Grid report CSV to write
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            out,
            n,
            d,
            components,
            seed,
            sigma_min,
            sigma_max,
        } => {
            let spec = GmmSpec {
                n_components: components,
                d,
                n,
                seed,
                sigma_range: (sigma_min, sigma_max),
            };
            let dataset = bench::gen_gmm(&spec)?;
            io::write_dataset_csv(&out, &dataset, None)?;
            println!("seed: {seed}");
            println!("wrote {} rows x {} attrs to {}", dataset.n(), dataset.d(), out.display());
        }
        Command::GenQueries {
            data,
            out,
            spec,
            active_count,
            range_pct,
            n,
            seed,
        } => {
            let (dataset, _) = io::read_dataset_csv(&data)?;
            let workload = match spec.kind.as_str() {
                "raq" => {
                    let aggregation = Aggregation {
                        kind: AggKind::parse(&spec.agg)?,
                        measure_attribute: spec.measure.unwrap_or(dataset.d() - 1),
                    };
                    if spec.predicate == "axis-range" && !spec.active.is_empty() {
                        // explicit active-attribute binding
                        gen_axis_range_with_active(
                            &dataset,
                            &spec.active,
                            range_pct,
                            n,
                            seed,
                            aggregation,
                        )?
                    } else {
                        let family = match spec.predicate.as_str() {
                            "axis-range" => PredicateFamily::AxisRange,
                            "half-space" => PredicateFamily::HalfSpace {
                                x_attr: spec.x_attr,
                                y_attr: spec.y_attr,
                            },
                            "rotated-rect" => PredicateFamily::RotatedRectangle {
                                x_attr: spec.x_attr,
                                y_attr: spec.y_attr,
                            },
                            other => {
                                return Err(Error::InvalidInput(format!(
                                    "unknown predicate '{other}'"
                                )))
                            }
                        };
                        bench::gen_workload(
                            &dataset,
                            &WorkloadSpec {
                                family,
                                active_count,
                                range_width_pct: range_pct,
                                n_queries: n,
                                seed,
                                train_fraction: 0.9,
                            },
                            aggregation,
                        )?
                    }
                }
                _ => bench::gen_knn_workload(&dataset, spec.resolve(&dataset)?)?,
            };
            if let neuraq::data::QueryVariant::Raq {
                predicate: neuraq::data::PredicateSpec::AxisRange { active },
                ..
            } = &workload.spec.variant
            {
                let list = active
                    .iter()
                    .map(|a| a.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                println!("active attributes: {list}");
            }
            io::write_workload_csv(&out, &workload)?;
            println!("seed: {seed}");
            println!("wrote {} queries to {}", workload.len(), out.display());
        }
        Command::Label {
            data,
            queries,
            out,
            spec,
        } => {
            let (dataset, _) = io::read_dataset_csv(&data)?;
            let qspec = spec.resolve(&dataset)?;
            let workload = io::read_workload_csv(&queries, &qspec, Some(&dataset))?;
            let (labeled, dropped) = bench::label_workload(&dataset, &workload)?;
            io::write_workload_csv(&out, &labeled)?;
            println!("seed: none (labeling is deterministic)");
            println!(
                "labeled {} queries ({dropped} dropped as empty) to {}",
                labeled.len(),
                out.display()
            );
        }
        Command::Train {
            data,
            queries,
            out,
            spec,
            train,
        } => {
            let (dataset, _) = io::read_dataset_csv(&data)?;
            let qspec = spec.resolve(&dataset)?;
            let workload = io::read_workload_csv(&queries, &qspec, Some(&dataset))?;
            if !workload.is_labeled() {
                return Err(Error::InvalidInput(
                    "training needs a labeled workload (run `neuraq label` first)".into(),
                ));
            }
            let height = train.height_for(workload.len())?;
            let arch = MlpArchitecture::new(
                qspec.d_pred(),
                train.layers,
                train.first,
                train.rest,
                qspec.output_dim(),
            )?;
            let engine = Engine::build(&workload, height, &arch, &train.config())?;
            engine.save(&out)?;
            println!("seed: {}", train.seed);
            println!(
                "trained {} models (height {height}, {} params total) to {}",
                engine.models().len(),
                engine.param_count(),
                out.display()
            );
        }
        Command::Query {
            engine,
            queries,
            out,
        } => {
            let engine = Engine::load(&engine)?;
            let workload = io::read_workload_csv(&queries, engine.spec(), None)?;
            let mut text = String::new();
            for q in &workload.queries {
                let answer = engine.answer(q)?;
                let row = answer
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                text.push_str(&row);
                text.push('\n');
            }
            std::fs::write(&out, text)?;
            println!("seed: none (inference is deterministic)");
            println!("answered {} queries to {}", workload.len(), out.display());
        }
        Command::Eval {
            data,
            queries,
            engine,
            methods,
            tree_agg_fraction,
            tree_agg_seed,
            out,
            spec,
        } => {
            let (dataset, _) = io::read_dataset_csv(&data)?;
            let qspec = spec.resolve(&dataset)?;
            let workload = io::read_workload_csv(&queries, &qspec, Some(&dataset))?;
            if !workload.is_labeled() {
                return Err(Error::InvalidInput("evaluation needs labeled queries".into()));
            }
            let engine = engine.map(|p| Engine::load(&p)).transpose()?;
            let mut tree_index = None;
            let mut rows = String::from(
                "method,metric,mean_error,mean_norm_abs_error,mean_query_us,median_query_us,p99_query_us,storage_bytes,queries,skipped\n",
            );
            for name in methods.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let method = match name {
                    "neuraq" => Method::Neural(engine.as_ref().ok_or_else(|| {
                        Error::InvalidInput("--engine required for method neuraq".into())
                    })?),
                    "tree-agg" => {
                        if tree_index.is_none() {
                            tree_index =
                                Some(tree_agg_build(&dataset, tree_agg_fraction, tree_agg_seed)?);
                        }
                        Method::TreeAgg {
                            index: tree_index.as_ref().unwrap(),
                            spec: &qspec,
                        }
                    }
                    "exact" => Method::Exact {
                        dataset: &dataset,
                        spec: &qspec,
                    },
                    other => {
                        return Err(Error::InvalidInput(format!("unknown method '{other}'")))
                    }
                };
                let report = evaluate(&method, &workload)?;
                let metric = match report.error.metric {
                    neuraq::metrics::ErrorMetric::Relative => "relative",
                    neuraq::metrics::ErrorMetric::NormalizedAbs => "norm-abs",
                };
                let _ = writeln!(
                    rows,
                    "{},{metric},{:.6},{:.6},{:.3},{:.3},{:.3},{},{},{}",
                    report.method,
                    report.error.primary_error(),
                    report.error.mean_normalized_abs_error,
                    report.timing.mean_ns / 1000.0,
                    report.timing.median_ns / 1000.0,
                    report.timing.p99_ns / 1000.0,
                    report.storage_bytes,
                    report.error.count,
                    report.skipped,
                );
            }
            std::fs::write(&out, rows)?;
            println!("seed: {tree_agg_seed} (tree-agg sampling)");
            println!("wrote evaluation report to {}", out.display());
        }
        Command::Bench { config, out } => {
            let config = bench::ExperimentConfig::load(&config)?;
            println!("config: {}", config.echo());
            let outcome = bench::run_experiment(&config, &out)?;
            println!("wrote {} method rows to {}", outcome.reports.len(), outcome.results_csv.display());
        }
        Command::GridSearch {
            data,
            queries,
            spec,
            heights,
            layers,
            first,
            rest,
            max_params,
            max_query_us,
            epochs,
            batch,
            lr,
            seed,
            val_fraction,
            out,
        } => {
            let (dataset, _) = io::read_dataset_csv(&data)?;
            let qspec = spec.resolve(&dataset)?;
            let workload = io::read_workload_csv(&queries, &qspec, Some(&dataset))?;
            let mut grid = Vec::new();
            for &h in &heights {
                for &nl in &layers {
                    for &fw in &first {
                        for &rw in &rest {
                            grid.push(GridPoint {
                                height: h,
                                n_layers: nl,
                                first_width: fw,
                                rest_width: rw,
                            });
                        }
                    }
                }
            }
            let limits = GridLimits {
                max_params,
                max_query_time: max_query_us
                    .map(|us| std::time::Duration::from_nanos((us * 1000.0) as u64)),
            };
            let config = TrainConfig {
                epochs,
                batch_size: batch,
                learning_rate: lr,
                seed,
            };
            let outcome = grid_search(&workload, &grid, limits, &config, val_fraction)?;
            let mut text = String::from(
                "height,layers,first,rest,validation_error,total_params,mean_query_us,feasible\n",
            );
            for row in &outcome.rows {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{:.6},{},{:.3},{}",
                    row.point.height,
                    row.point.n_layers,
                    row.point.first_width,
                    row.point.rest_width,
                    row.validation_error,
                    row.total_params,
                    row.mean_query_ns / 1000.0,
                    row.feasible
                );
            }
            std::fs::write(&out, text)?;
            println!("seed: {seed}");
            println!(
                "best: height={} layers={} first={} rest={} (val error {:.6}, {} params)",
                outcome.best.height,
                outcome.best.n_layers,
                outcome.best.first_width,
                outcome.best.rest_width,
                outcome.best_row.validation_error,
                outcome.best_row.total_params
            );
        }
    }
    Ok(())
}

/// Axis-range generation under an explicit active-attribute binding.
fn gen_axis_range_with_active(
    dataset: &Dataset,
    active: &[usize],
    range_pct: f64,
    n: usize,
    seed: u64,
    aggregation: Aggregation,
) -> Result<Workload> {
    use neuraq::data::{PredicateSpec, QueryInstance};
    use rand::{Rng, SeedableRng};
    let predicate = PredicateSpec::AxisRange {
        active: active.to_vec(),
    };
    predicate.validate(dataset.d())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let r = active.len();
    let width_frac = range_pct / 100.0;
    let mut queries = Vec::with_capacity(n);
    for _ in 0..n {
        let mut values = vec![0.0; 2 * r];
        for (slot, &attr) in active.iter().enumerate() {
            let dom = dataset.domain(attr);
            let width = width_frac * dom.span();
            let max_lower = dom.max - width;
            let lower = if max_lower > dom.min {
                rng.random_range(dom.min..=max_lower)
            } else {
                dom.min
            };
            let mut upper = lower + width;
            if upper >= dom.max {
                upper = dom.max.next_up();
            }
            values[slot] = lower;
            values[r + slot] = upper;
        }
        queries.push(QueryInstance::new(values)?);
    }
    Workload::new(
        QueryFunctionSpec::raq(predicate, aggregation),
        queries,
        None,
    )
}
