//! Uniform-sampling baseline: an STR bulk-loaded bounding-volume tree over a
//! uniform row sample, queried with the same aggregation semantics as the
//! exact oracle. SUM and COUNT estimates are scaled by the inverse sampling
//! fraction; AVG/STD/MEDIAN are computed on the sample directly.

use crate::data::{Dataset, PredicateSpec, QueryFunctionSpec, QueryInstance, QueryVariant};
use crate::error::{Error, Result};
use crate::oracle::OracleResult;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FANOUT: usize = 16;

#[derive(Debug, Clone)]
struct Mbr {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Mbr {
    fn empty(d: usize) -> Self {
        Mbr {
            min: vec![f64::INFINITY; d],
            max: vec![f64::NEG_INFINITY; d],
        }
    }

    fn extend_point(&mut self, p: &[f64]) {
        for i in 0..p.len() {
            self.min[i] = self.min[i].min(p[i]);
            self.max[i] = self.max[i].max(p[i]);
        }
    }

    fn extend_mbr(&mut self, other: &Mbr) {
        for i in 0..self.min.len() {
            self.min[i] = self.min[i].min(other.min[i]);
            self.max[i] = self.max[i].max(other.max[i]);
        }
    }

    fn center(&self, dim: usize) -> f64 {
        (self.min[dim] + self.max[dim]) / 2.0
    }
}

#[derive(Debug, Clone)]
enum Node {
    Internal { mbr: Mbr, children: Vec<Node> },
    Leaf { mbr: Mbr, slots: Vec<u32> },
}

impl Node {
    fn mbr(&self) -> &Mbr {
        match self {
            Node::Internal { mbr, .. } | Node::Leaf { mbr, .. } => mbr,
        }
    }
}

/// Bounding-volume tree over a uniform sample of dataset rows, bulk-loaded
/// with sort-tile-recursive packing at fanout 16.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    d: usize,
    sample_fraction: f64,
    /// Sampled rows, flat row-major, in ascending original-row order.
    rows: Vec<f64>,
    /// Original dataset row index of each sample slot.
    source_rows: Vec<u32>,
    root: Node,
}

/// Sort-tile-recursive tiling: orders items by their center coordinate on
/// each dimension in turn, carving the set into slabs sized so the final
/// groups hold at most `capacity` items.
fn str_tile<T, C: Fn(&T, usize) -> f64>(
    items: Vec<T>,
    dim: usize,
    d: usize,
    capacity: usize,
    center: &C,
    out: &mut Vec<Vec<T>>,
) {
    if items.len() <= capacity {
        out.push(items);
        return;
    }
    let pages = items.len().div_ceil(capacity);
    let remaining_dims = d - dim;
    if remaining_dims <= 1 {
        let mut items = items;
        items.sort_by(|a, b| center(a, dim).total_cmp(&center(b, dim)));
        let mut rest = items;
        while !rest.is_empty() {
            let take = rest.len().min(capacity);
            let tail = rest.split_off(take);
            out.push(rest);
            rest = tail;
        }
        return;
    }
    let slabs = (pages as f64).powf(1.0 / remaining_dims as f64).ceil() as usize;
    let slab_len = items.len().div_ceil(slabs);
    let mut items = items;
    items.sort_by(|a, b| center(a, dim).total_cmp(&center(b, dim)));
    let mut rest = items;
    while !rest.is_empty() {
        let take = rest.len().min(slab_len);
        let tail = rest.split_off(take);
        str_tile(rest, dim + 1, d, capacity, center, out);
        rest = tail;
    }
}

fn build_tree(d: usize, rows: &[f64], n_samples: usize) -> Node {
    let slots: Vec<u32> = (0..n_samples as u32).collect();
    let row = |slot: u32| &rows[slot as usize * d..(slot as usize + 1) * d];

    let mut groups = Vec::new();
    str_tile(slots, 0, d, FANOUT, &|s, dim| row(*s)[dim], &mut groups);
    let mut level: Vec<Node> = groups
        .into_iter()
        .map(|slots| {
            let mut mbr = Mbr::empty(d);
            for &s in &slots {
                mbr.extend_point(row(s));
            }
            Node::Leaf { mbr, slots }
        })
        .collect();

    while level.len() > 1 {
        let mut groups = Vec::new();
        str_tile(level, 0, d, FANOUT, &|n, dim| n.mbr().center(dim), &mut groups);
        level = groups
            .into_iter()
            .map(|children| {
                let mut mbr = Mbr::empty(d);
                for c in &children {
                    mbr.extend_mbr(c.mbr());
                }
                Node::Internal { mbr, children }
            })
            .collect();
    }
    level.pop().expect("at least one node")
}

/// Draws a uniform sample without replacement of `ceil(fraction * n)` rows
/// and bulk-loads the spatial index over it. A fixed seed yields an
/// identical sample on repeated calls.
pub fn tree_agg_build(dataset: &Dataset, sample_fraction: f64, seed: u64) -> Result<SpatialIndex> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(Error::Contract(format!(
            "sample fraction {sample_fraction} outside (0, 1]"
        )));
    }
    let n = dataset.n();
    let d = dataset.d();
    let n_samples = ((sample_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut source_rows: Vec<u32> = rand::seq::index::sample(&mut rng, n, n_samples)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    source_rows.sort_unstable();

    let mut rows = Vec::with_capacity(n_samples * d);
    for &src in &source_rows {
        rows.extend_from_slice(dataset.row(src as usize));
    }
    let root = build_tree(d, &rows, n_samples);
    Ok(SpatialIndex {
        d,
        sample_fraction,
        rows,
        source_rows,
        root,
    })
}

impl SpatialIndex {
    pub fn sample_count(&self) -> usize {
        self.source_rows.len()
    }

    pub fn sample_fraction(&self) -> f64 {
        self.sample_fraction
    }

    fn row(&self, slot: u32) -> &[f64] {
        &self.rows[slot as usize * self.d..(slot as usize + 1) * self.d]
    }

    /// Approximate in-memory footprint: sample rows plus node bounding boxes.
    pub fn storage_bytes(&self) -> u64 {
        fn node_bytes(node: &Node, d: usize) -> u64 {
            let mbr = (2 * d * std::mem::size_of::<f64>()) as u64;
            match node {
                Node::Leaf { slots, .. } => mbr + (slots.len() * 4) as u64,
                Node::Internal { children, .. } => {
                    mbr + children.iter().map(|c| node_bytes(c, d)).sum::<u64>()
                }
            }
        }
        (self.rows.len() * 8) as u64 + node_bytes(&self.root, self.d)
    }

    /// Collects the sample slots whose rows fall inside `prune`'s candidate
    /// region and match the full predicate.
    fn matching_slots(
        &self,
        spec: &QueryFunctionSpec,
        q: &QueryInstance,
        prune: &PruneBox,
    ) -> Result<Vec<u32>> {
        let mut matched = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            if prune.rejects(node.mbr()) {
                continue;
            }
            match node {
                Node::Internal { children, .. } => stack.extend(children.iter()),
                Node::Leaf { slots, .. } => {
                    for &slot in slots {
                        if spec.matches_row(q, self.row(slot))? {
                            matched.push(slot);
                        }
                    }
                }
            }
        }
        matched.sort_unstable();
        Ok(matched)
    }
}

/// Axis-aligned candidate region derived from the predicate, used only to
/// prune subtrees; every pruned subtree is guaranteed predicate-free.
struct PruneBox {
    /// (attribute, lower, upper, upper_exclusive)
    bounds: Vec<(usize, f64, f64, bool)>,
}

impl PruneBox {
    fn none() -> Self {
        PruneBox { bounds: Vec::new() }
    }

    fn for_predicate(spec: &QueryFunctionSpec, q: &QueryInstance) -> Self {
        let QueryVariant::Raq { predicate, .. } = &spec.variant else {
            return PruneBox::none();
        };
        let qv = q.values();
        match predicate {
            PredicateSpec::AxisRange { active } => {
                let r = active.len();
                PruneBox {
                    bounds: active
                        .iter()
                        .enumerate()
                        .map(|(slot, &attr)| (attr, qv[slot], qv[r + slot], true))
                        .collect(),
                }
            }
            PredicateSpec::RotatedRectangle { x_attr, y_attr } => {
                // Bounding box of the rotated rectangle's four corners.
                let (p1x, p1y, p2x, p2y, phi) = (qv[0], qv[1], qv[2], qv[3], qv[4]);
                let (cx, cy) = ((p1x + p2x) / 2.0, (p1y + p2y) / 2.0);
                let (hw, hh) = ((p2x - p1x).abs() / 2.0, (p2y - p1y).abs() / 2.0);
                let (cos, sin) = (phi.cos(), phi.sin());
                let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
                let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
                for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let x = cx + sx * hw * cos - sy * hh * sin;
                    let y = cy + sx * hw * sin + sy * hh * cos;
                    min_x = min_x.min(x);
                    max_x = max_x.max(x);
                    min_y = min_y.min(y);
                    max_y = max_y.max(y);
                }
                PruneBox {
                    bounds: vec![
                        (*x_attr, min_x, max_x, false),
                        (*y_attr, min_y, max_y, false),
                    ],
                }
            }
            // A half-space has no bounded box; enumerate everything.
            PredicateSpec::HalfSpace { .. } => PruneBox::none(),
        }
    }

    fn rejects(&self, mbr: &Mbr) -> bool {
        self.bounds
            .iter()
            .any(|&(attr, lower, upper, upper_exclusive)| {
                mbr.max[attr] < lower
                    || if upper_exclusive {
                        mbr.min[attr] >= upper
                    } else {
                        mbr.min[attr] > upper
                    }
            })
    }
}

/// Answers a range aggregate over the sampled rows. Matching rows are found
/// through the index; the aggregate is computed exactly as in the exact
/// oracle and then SUM/COUNT are scaled by the inverse sampling fraction.
pub fn tree_agg_query(
    index: &SpatialIndex,
    spec: &QueryFunctionSpec,
    q: &QueryInstance,
) -> Result<OracleResult> {
    let QueryVariant::Raq { aggregation, .. } = &spec.variant else {
        return Err(Error::Contract("tree_agg_query requires an RAQ spec".into()));
    };
    if q.len() != spec.d_pred() {
        return Err(Error::DimensionMismatch {
            context: "tree_agg_query query",
            expected: spec.d_pred(),
            actual: q.len(),
        });
    }
    let prune = PruneBox::for_predicate(spec, q);
    let slots = index.matching_slots(spec, q, &prune)?;
    let measure = aggregation.measure_attribute;
    let values: Vec<f64> = slots
        .iter()
        .map(|&s| index.row(s)[measure])
        .collect();
    let result = super::aggregate(aggregation.kind, &values);
    Ok(match (aggregation.kind, result) {
        (crate::data::AggKind::Count | crate::data::AggKind::Sum, OracleResult::Value(v)) => {
            OracleResult::Value(v / index.sample_fraction)
        }
        (_, r) => r,
    })
}
