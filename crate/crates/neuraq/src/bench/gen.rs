//! Synthetic data and workload generation, exact labeling, and train/test
//! splitting. Everything is seeded and bit-reproducible.

use crate::data::{
    Aggregation, Dataset, PredicateSpec, QueryFunctionSpec, QueryInstance, QueryVariant, Workload,
};
use crate::error::{Error, Result};
use crate::oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// Gaussian-mixture synthesizer: component means uniform over the unit
/// hypercube, diagonal covariances with per-dimension standard deviations
/// uniform in `sigma_range` (as a fraction of the unit domain span). Samples
/// are clamped to [0,1]^d and domains are set to the observed bounds.
#[derive(Debug, Clone)]
pub struct GmmSpec {
    pub n_components: usize,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub sigma_range: (f64, f64),
}

impl GmmSpec {
    pub fn new(d: usize, n: usize, seed: u64) -> Self {
        GmmSpec {
            n_components: 100,
            d,
            n,
            seed,
            sigma_range: (0.01, 0.1),
        }
    }
}

pub fn gen_gmm(spec: &GmmSpec) -> Result<Dataset> {
    if spec.n_components == 0 || spec.d == 0 || spec.n == 0 {
        return Err(Error::Contract("gmm spec needs n, d, components >= 1".into()));
    }
    let (lo, hi) = spec.sigma_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::Contract("gmm sigma range must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.n_components)
        .map(|_| (0..spec.d).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let sigmas: Vec<Vec<f64>> = (0..spec.n_components)
        .map(|_| (0..spec.d).map(|_| rng.random_range(lo..=hi)).collect())
        .collect();

    let mut values = Vec::with_capacity(spec.n * spec.d);
    for _ in 0..spec.n {
        let c = rng.random_range(0..spec.n_components);
        for dim in 0..spec.d {
            let normal = Normal::new(means[c][dim], sigmas[c][dim])
                .map_err(|e| Error::Contract(format!("gmm component: {e}")))?;
            values.push(normal.sample(&mut rng).clamp(0.0, 1.0));
        }
    }
    Dataset::from_flat(values, spec.d)
}

/// Which predicate family a generated workload uses.
#[derive(Debug, Clone, PartialEq)]
pub enum PredicateFamily {
    AxisRange,
    HalfSpace { x_attr: usize, y_attr: usize },
    RotatedRectangle { x_attr: usize, y_attr: usize },
}

/// Workload generator parameters. One workload is one query function: the
/// active attribute set is drawn once from the seed and shared by every
/// query in the workload.
#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub family: PredicateFamily,
    /// Number of active attributes (axis-range only).
    pub active_count: usize,
    /// Each active range spans this percentage of the attribute domain.
    pub range_width_pct: f64,
    pub n_queries: usize,
    pub seed: u64,
    /// Fraction of queries assigned to the training split by
    /// [`split_workload`].
    pub train_fraction: f64,
}

impl WorkloadSpec {
    pub fn axis_range(active_count: usize, range_width_pct: f64, n_queries: usize, seed: u64) -> Self {
        WorkloadSpec {
            family: PredicateFamily::AxisRange,
            active_count,
            range_width_pct,
            n_queries,
            seed,
            train_fraction: 0.9,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if let PredicateFamily::AxisRange = self.family {
            if self.active_count == 0 || self.active_count > d {
                return Err(Error::Contract(format!(
                    "active count {} outside [1, d={d}]",
                    self.active_count
                )));
            }
            if !(self.range_width_pct > 0.0 && self.range_width_pct <= 100.0) {
                return Err(Error::Contract(format!(
                    "range width {}% outside (0, 100]",
                    self.range_width_pct
                )));
            }
        }
        if self.n_queries == 0 {
            return Err(Error::Contract("workload needs n_queries >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Contract("train fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Generates an unlabeled RAQ workload over the dataset.
///
/// Axis ranges: the active attributes are sampled uniformly without
/// replacement (once, from the seed); per query each active range has width
/// `range_width_pct`% of the attribute span and a lower bound drawn
/// uniformly so the range stays inside the domain. An upper bound that
/// lands exactly on the domain maximum is nudged just above it so the
/// half-open range still covers rows at the maximum.
pub fn gen_workload(
    dataset: &Dataset,
    spec: &WorkloadSpec,
    aggregation: Aggregation,
) -> Result<Workload> {
    spec.validate(dataset.d())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (predicate, queries) = match &spec.family {
        PredicateFamily::AxisRange => {
            let mut active: Vec<usize> =
                rand::seq::index::sample(&mut rng, dataset.d(), spec.active_count).into_vec();
            active.sort_unstable();
            let r = active.len();
            let width_frac = spec.range_width_pct / 100.0;
            let mut queries = Vec::with_capacity(spec.n_queries);
            for _ in 0..spec.n_queries {
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
            (PredicateSpec::AxisRange { active }, queries)
        }
        PredicateFamily::HalfSpace { x_attr, y_attr } => {
            let dx = dataset.domain(*x_attr);
            let dy = dataset.domain(*y_attr);
            let slope_scale = if dx.span() > 0.0 { dy.span() / dx.span() } else { 1.0 };
            let queries = (0..spec.n_queries)
                .map(|_| {
                    // A line through a uniform anchor point in the domain box
                    // with bounded slope, so both half-spaces stay non-trivial.
                    let slope = rng.random_range(-2.0..2.0) * slope_scale;
                    let x0 = rng.random_range(dx.min..=dx.max);
                    let y0 = rng.random_range(dy.min..=dy.max);
                    QueryInstance::new(vec![slope, y0 - slope * x0])
                })
                .collect::<Result<Vec<_>>>()?;
            (
                PredicateSpec::HalfSpace {
                    x_attr: *x_attr,
                    y_attr: *y_attr,
                },
                queries,
            )
        }
        PredicateFamily::RotatedRectangle { x_attr, y_attr } => {
            let dx = dataset.domain(*x_attr);
            let dy = dataset.domain(*y_attr);
            let queries = (0..spec.n_queries)
                .map(|_| {
                    QueryInstance::new(vec![
                        rng.random_range(dx.min..=dx.max),
                        rng.random_range(dy.min..=dy.max),
                        rng.random_range(dx.min..=dx.max),
                        rng.random_range(dy.min..=dy.max),
                        rng.random_range(0.0..std::f64::consts::FRAC_PI_2),
                    ])
                })
                .collect::<Result<Vec<_>>>()?;
            (
                PredicateSpec::RotatedRectangle {
                    x_attr: *x_attr,
                    y_attr: *y_attr,
                },
                queries,
            )
        }
    };
    let spec = QueryFunctionSpec::raq(predicate, aggregation);
    spec.validate_for(dataset)?;
    Workload::new(spec, queries, None)
}

/// k-NN workloads reuse the dataset rows as queries; [`split_workload`]
/// carves them into disjoint train and test query sets.
pub fn gen_knn_workload(dataset: &Dataset, spec: QueryFunctionSpec) -> Result<Workload> {
    if !matches!(
        spec.variant,
        QueryVariant::KnnDistance { .. } | QueryVariant::KnnPoint { .. }
    ) {
        return Err(Error::Contract("gen_knn_workload needs a k-NN spec".into()));
    }
    spec.validate_for(dataset)?;
    let queries = dataset
        .rows()
        .map(|row| QueryInstance::new(row.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Workload::new(spec, queries, None)
}

/// Attaches exact oracle labels, dropping queries whose aggregate is
/// undefined (empty matching set). Returns the labeled workload and the
/// number of dropped queries.
pub fn label_workload(dataset: &Dataset, workload: &Workload) -> Result<(Workload, usize)> {
    workload.spec.validate_for(dataset)?;
    let labels: Vec<Option<Vec<f64>>> = workload
        .queries
        .par_iter()
        .map(|q| oracle::label_for(dataset, &workload.spec, q))
        .collect::<Result<_>>()?;
    let mut kept_queries = Vec::with_capacity(workload.queries.len());
    let mut kept_labels = Vec::with_capacity(workload.queries.len());
    let mut dropped = 0usize;
    for (q, label) in workload.queries.iter().zip(labels) {
        match label {
            Some(l) => {
                kept_queries.push(q.clone());
                kept_labels.push(l);
            }
            None => dropped += 1,
        }
    }
    if kept_queries.is_empty() {
        return Err(Error::Contract(
            "every query in the workload had an empty matching set".into(),
        ));
    }
    Ok((
        Workload::new(workload.spec.clone(), kept_queries, Some(kept_labels))?,
        dropped,
    ))
}

/// Disjoint, exhaustive train/test split; a pure function of the seed.
pub fn split_workload(
    workload: &Workload,
    train_fraction: f64,
    seed: u64,
) -> Result<(Workload, Workload)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Contract("train fraction must be in (0, 1)".into()));
    }
    let n = workload.len();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let pick = |idx: &[usize]| -> Result<Workload> {
        let queries = idx.iter().map(|&i| workload.queries[i].clone()).collect();
        let labels = workload
            .labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i].clone()).collect());
        Workload::new(workload.spec.clone(), queries, labels)
    };
    Ok((pick(&order[..n_train])?, pick(&order[n_train..])?))
}

/// Uniform query sample over the test region of a dataset, used where a
/// workload is needed but the distribution does not matter.
pub fn uniform_queries(
    dataset: &Dataset,
    spec: &QueryFunctionSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<QueryInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dataset.d();
    (0..n)
        .map(|_| {
            let values = match &spec.variant {
                QueryVariant::KnnDistance { .. } | QueryVariant::KnnPoint { .. } => (0..d)
                    .map(|a| {
                        let dom = dataset.domain(a);
                        rng.random_range(dom.min..=dom.max)
                    })
                    .collect(),
                QueryVariant::Raq { .. } => {
                    return Err(Error::Contract(
                        "uniform_queries supports only k-NN specs; use gen_workload for RAQs"
                            .into(),
                    ))
                }
            };
            QueryInstance::new(values)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AggKind;

    fn avg(measure: usize) -> Aggregation {
        Aggregation {
            kind: AggKind::Avg,
            measure_attribute: measure,
        }
    }

    #[test]
    fn gmm_has_requested_shape() {
        let ds = gen_gmm(&GmmSpec::new(5, 1000, 3)).unwrap();
        assert_eq!(ds.n(), 1000);
        assert_eq!(ds.d(), 5);
        for row in ds.rows() {
            assert!(row.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn gmm_is_deterministic_per_seed() {
        let a = gen_gmm(&GmmSpec::new(3, 200, 9)).unwrap();
        let b = gen_gmm(&GmmSpec::new(3, 200, 9)).unwrap();
        for (ra, rb) in a.rows().zip(b.rows()) {
            for (x, y) in ra.iter().zip(rb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let c = gen_gmm(&GmmSpec::new(3, 200, 10)).unwrap();
        assert!(a.rows().zip(c.rows()).any(|(ra, rc)| ra != rc));
    }

    #[test]
    fn single_tight_component_concentrates_near_its_mean() {
        let spec = GmmSpec {
            n_components: 1,
            d: 2,
            n: 4000,
            seed: 4,
            sigma_range: (0.01, 0.011),
        };
        let ds = gen_gmm(&spec).unwrap();
        // Re-derive the component mean the generator drew.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mean: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..1.0)).collect();
        for dim in 0..2 {
            let sample_mean: f64 =
                ds.rows().map(|r| r[dim]).sum::<f64>() / ds.n() as f64;
            // 3 sigma / sqrt(n) with sigma ~ 0.011
            let tolerance = 3.0 * 0.011 / (ds.n() as f64).sqrt();
            assert!(
                (sample_mean - mean[dim]).abs() < tolerance.max(1e-3),
                "dim {dim}: sample mean {sample_mean} vs component mean {}",
                mean[dim]
            );
        }
    }

    #[test]
    fn all_attributes_active_when_r_equals_d() {
        let ds = gen_gmm(&GmmSpec::new(4, 500, 1)).unwrap();
        let wspec = WorkloadSpec::axis_range(4, 25.0, 20, 7);
        let w = gen_workload(&ds, &wspec, avg(0)).unwrap();
        match &w.spec.variant {
            QueryVariant::Raq {
                predicate: PredicateSpec::AxisRange { active },
                ..
            } => assert_eq!(active, &vec![0, 1, 2, 3]),
            _ => panic!("wrong variant"),
        }
        assert_eq!(w.spec.d_pred(), 8);
    }

    #[test]
    fn full_width_ranges_match_every_row() {
        let ds = gen_gmm(&GmmSpec::new(3, 400, 2)).unwrap();
        let wspec = WorkloadSpec::axis_range(2, 100.0, 25, 3);
        let w = gen_workload(
            &ds,
            &wspec,
            Aggregation {
                kind: AggKind::Count,
                measure_attribute: 0,
            },
        )
        .unwrap();
        for q in &w.queries {
            let count = crate::oracle::exact_raq(&ds, &w.spec, q)
                .unwrap()
                .value()
                .unwrap();
            assert_eq!(count, ds.n() as f64, "full-range count must equal n");
        }
    }

    #[test]
    fn generated_ranges_stay_inside_the_domain() {
        let ds = gen_gmm(&GmmSpec::new(5, 300, 6)).unwrap();
        for pct in [1.0, 10.0, 50.0, 100.0] {
            let wspec = WorkloadSpec::axis_range(3, pct, 50, 11);
            let w = gen_workload(&ds, &wspec, avg(0)).unwrap();
            let QueryVariant::Raq {
                predicate: PredicateSpec::AxisRange { active },
                ..
            } = &w.spec.variant
            else {
                panic!()
            };
            let r = active.len();
            for q in &w.queries {
                for (slot, &attr) in active.iter().enumerate() {
                    let dom = ds.domain(attr);
                    let (lo, hi) = (q.values()[slot], q.values()[r + slot]);
                    assert!(lo >= dom.min);
                    assert!(hi <= dom.max.next_up());
                    assert!(lo < hi);
                }
            }
        }
    }

    #[test]
    fn workload_generation_is_deterministic() {
        let ds = gen_gmm(&GmmSpec::new(3, 200, 8)).unwrap();
        let wspec = WorkloadSpec::axis_range(1, 10.0, 40, 5);
        let a = gen_workload(&ds, &wspec, avg(1)).unwrap();
        let b = gen_workload(&ds, &wspec, avg(1)).unwrap();
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.spec, b.spec);
    }

    #[test]
    fn labels_match_the_oracle_and_relabeling_is_idempotent() {
        let ds = Dataset::from_rows(vec![vec![1.0, 4.0], vec![2.0, 7.0], vec![3.0, 6.0]]).unwrap();
        let spec = QueryFunctionSpec::raq(
            PredicateSpec::AxisRange { active: vec![0] },
            avg(1),
        );
        let queries = vec![
            QueryInstance::new(vec![0.0, 3.0]).unwrap(),
            QueryInstance::new(vec![10.0, 11.0]).unwrap(),
        ];
        let w = Workload::new(spec, queries, None).unwrap();
        let (labeled, dropped) = label_workload(&ds, &w).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(labeled.labels.as_ref().unwrap()[0], vec![5.5]);
        let (again, dropped_again) = label_workload(&ds, &labeled).unwrap();
        assert_eq!(dropped_again, 0);
        assert_eq!(again.labels, labeled.labels);
    }

    #[test]
    fn count_labels_are_non_negative_integers() {
        let ds = gen_gmm(&GmmSpec::new(2, 300, 12)).unwrap();
        let wspec = WorkloadSpec::axis_range(1, 20.0, 60, 13);
        let w = gen_workload(
            &ds,
            &wspec,
            Aggregation {
                kind: AggKind::Count,
                measure_attribute: 0,
            },
        )
        .unwrap();
        let (labeled, _) = label_workload(&ds, &w).unwrap();
        for l in labeled.labels.as_ref().unwrap() {
            assert!(l[0] >= 0.0 && l[0].fract() == 0.0);
        }
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seed_pure() {
        let ds = gen_gmm(&GmmSpec::new(2, 100, 14)).unwrap();
        let wspec = WorkloadSpec::axis_range(1, 30.0, 101, 15);
        let w = gen_workload(&ds, &wspec, avg(1)).unwrap();
        let (train_a, test_a) = split_workload(&w, 0.8, 55).unwrap();
        let (train_b, test_b) = split_workload(&w, 0.8, 55).unwrap();
        assert_eq!(train_a.queries, train_b.queries);
        assert_eq!(test_a.queries, test_b.queries);
        assert_eq!(train_a.len() + test_a.len(), w.len());
        assert_eq!(train_a.len(), 81); // round(0.8 * 101)
        let mut all: Vec<&QueryInstance> =
            train_a.queries.iter().chain(&test_a.queries).collect();
        all.sort_by(|a, b| a.values()[0].total_cmp(&b.values()[0]));
        let mut orig: Vec<&QueryInstance> = w.queries.iter().collect();
        orig.sort_by(|a, b| a.values()[0].total_cmp(&b.values()[0]));
        assert_eq!(all, orig);
        let (train_c, _) = split_workload(&w, 0.8, 56).unwrap();
        assert_ne!(train_a.queries, train_c.queries);
    }

    #[test]
    fn knn_workload_reuses_dataset_rows() {
        let ds = gen_gmm(&GmmSpec::new(3, 50, 16)).unwrap();
        let w = gen_knn_workload(&ds, QueryFunctionSpec::knn_distance(5, 3)).unwrap();
        assert_eq!(w.len(), 50);
        for (q, row) in w.queries.iter().zip(ds.rows()) {
            assert_eq!(q.values(), row);
        }
    }
}
