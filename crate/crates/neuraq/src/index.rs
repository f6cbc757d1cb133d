//! kd-tree partitioning of the query space.
//!
//! The tree is built from a sample of query instances: every node splits at
//! the median of its subset along one dimension, cycling dimensions per
//! level, until all leaves sit at the requested height. Lookup descends with
//! `q[dim] <= val` going left, so a query lands in the partition whose
//! construction subset it came from.

use crate::data::QueryInstance;
use crate::error::{Error, Result};

/// One internal split: dimension and median value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub dim: u32,
    pub val: f64,
}

/// A perfect binary kd-tree of height `h`: `2^h - 1` internal splits stored
/// in breadth-first order and `2^h` leaves numbered left to right.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionIndex {
    d_pred: usize,
    height: u32,
    splits: Vec<Split>,
}

impl PartitionIndex {
    pub fn d_pred(&self) -> usize {
        self.d_pred
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn leaf_count(&self) -> usize {
        1usize << self.height
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub(crate) fn from_parts(d_pred: usize, height: u32, splits: Vec<Split>) -> Result<Self> {
        if splits.len() != (1usize << height) - 1 {
            return Err(Error::Contract(format!(
                "height {height} needs {} splits, got {}",
                (1usize << height) - 1,
                splits.len()
            )));
        }
        if let Some(s) = splits.iter().find(|s| s.dim as usize >= d_pred) {
            return Err(Error::Contract(format!(
                "split dimension {} out of range (d_pred={d_pred})",
                s.dim
            )));
        }
        Ok(PartitionIndex {
            d_pred,
            height,
            splits,
        })
    }

    /// Descends from the root with `q[dim] <= val` going left; exactly
    /// `height` comparisons. Returns the leaf id.
    pub fn locate(&self, q: &QueryInstance) -> usize {
        assert_eq!(q.len(), self.d_pred, "locate query length");
        self.locate_values(q.values())
    }

    pub(crate) fn locate_values(&self, q: &[f64]) -> usize {
        let internal = self.splits.len();
        let mut idx = 0usize;
        while idx < internal {
            let s = self.splits[idx];
            idx = if q[s.dim as usize] <= s.val {
                2 * idx + 1
            } else {
                2 * idx + 2
            };
        }
        idx - internal
    }
}

/// Output of [`build_index`]: the finished tree plus, per leaf, the indices
/// of the construction queries that fell into it (kept only for training).
#[derive(Debug, Clone)]
pub struct BuiltIndex {
    pub index: PartitionIndex,
    pub leaf_queries: Vec<Vec<usize>>,
}

/// Builds a height-`h` kd-tree over the query sample.
///
/// Splits start on dimension 0 at the root and cycle `(dim + 1) % d_pred`
/// per level. The split value is the lower median of the subset (element
/// `(m-1)/2` of the sorted values); queries equal to it go left. Requires
/// at least `2^h` queries, and fails naming the first leaf that would be
/// empty (possible with heavily duplicated coordinates).
pub fn build_index(queries: &[QueryInstance], h: u32) -> Result<BuiltIndex> {
    if queries.is_empty() {
        return Err(Error::EmptyLeaf { leaf: 0 });
    }
    let d_pred = queries[0].len();
    if d_pred == 0 {
        return Err(Error::Contract("queries must have d_pred >= 1".into()));
    }
    if let Some(q) = queries.iter().find(|q| q.len() != d_pred) {
        return Err(Error::DimensionMismatch {
            context: "build_index query",
            expected: d_pred,
            actual: q.len(),
        });
    }
    let leaves = 1usize << h;
    if queries.len() < leaves {
        return Err(Error::Contract(format!(
            "need at least 2^{h} = {leaves} queries, got {}",
            queries.len()
        )));
    }

    let n_internal = leaves - 1;
    let mut splits = vec![
        Split {
            dim: 0,
            val: f64::NAN
        };
        n_internal
    ];
    let mut leaf_queries: Vec<Vec<usize>> = Vec::with_capacity(leaves);

    // Depth-first, left before right, so leaf ids come out left to right.
    fn descend(
        queries: &[QueryInstance],
        d_pred: usize,
        n_internal: usize,
        splits: &mut [Split],
        leaf_queries: &mut Vec<Vec<usize>>,
        node: usize,
        dim: u32,
        subset: Vec<usize>,
    ) -> Result<()> {
        if subset.is_empty() {
            // All leaves below this node would be empty; name the first.
            let mut first_leaf = node;
            while first_leaf < n_internal {
                first_leaf = 2 * first_leaf + 1;
            }
            return Err(Error::EmptyLeaf {
                leaf: first_leaf - n_internal,
            });
        }
        if node >= n_internal {
            leaf_queries.push(subset);
            return Ok(());
        }
        let mut values: Vec<f64> = subset
            .iter()
            .map(|&i| queries[i].values()[dim as usize])
            .collect();
        values.sort_by(f64::total_cmp);
        let median = values[(values.len() - 1) / 2];
        splits[node] = Split { dim, val: median };

        let (left, right): (Vec<usize>, Vec<usize>) = subset
            .into_iter()
            .partition(|&i| queries[i].values()[dim as usize] <= median);
        let next_dim = (dim + 1) % d_pred as u32;
        descend(
            queries,
            d_pred,
            n_internal,
            splits,
            leaf_queries,
            2 * node + 1,
            next_dim,
            left,
        )?;
        descend(
            queries,
            d_pred,
            n_internal,
            splits,
            leaf_queries,
            2 * node + 2,
            next_dim,
            right,
        )
    }

    descend(
        queries,
        d_pred,
        n_internal,
        &mut splits,
        &mut leaf_queries,
        0,
        0,
        (0..queries.len()).collect(),
    )?;

    let index = PartitionIndex::from_parts(d_pred, h, splits)?;
    debug_assert_eq!(leaf_queries.len(), leaves);
    Ok(BuiltIndex {
        index,
        leaf_queries,
    })
}

/// Tree height from dataset size and per-model capacity:
/// `h = max(0, ceil(log2(n / c)))`, the smallest height whose `2^h`
/// partitions keep the per-partition load at or below `c`.
pub fn choose_height(n: usize, c: usize) -> Result<u32> {
    if n == 0 || c == 0 {
        return Err(Error::Contract("choose_height needs n >= 1 and c >= 1".into()));
    }
    let mut h = 0u32;
    // smallest h with c * 2^h >= n
    while (c as u128) << h < n as u128 {
        h += 1;
    }
    Ok(h)
}
