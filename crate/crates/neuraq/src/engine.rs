//! The trained engine: a kd-tree over query space with one model per leaf.
//!
//! Answering is a tree descent plus a single forward pass and never touches
//! the dataset, so a saved engine can serve queries after the table itself
//! is gone. The engine file bundles spec, index and all leaf models behind a
//! trailing SHA-256 checksum.

use crate::data::{
    AggKind, Aggregation, PredicateSpec, QueryFunctionSpec, QueryInstance, QueryVariant, Workload,
};
use crate::error::{Error, Result};
use crate::index::{build_index, PartitionIndex, Split};
use crate::mlp::{self, Layer, Mlp, MlpArchitecture, Normalization, TrainConfig};
use crate::oracle;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::io::Write as _;
use std::path::Path;

const MAGIC: &[u8; 4] = b"NQEF";
const FORMAT_VERSION: u32 = 1;
const MODEL_BLOCK_VERSION: u32 = 1;

/// Build provenance kept alongside the models.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineMeta {
    pub arch: MlpArchitecture,
    pub train: TrainConfig,
    pub leaf_training_sizes: Vec<u64>,
    pub built_unix_secs: u64,
}

/// A built engine for one query function.
#[derive(Debug, Clone)]
pub struct Engine {
    spec: QueryFunctionSpec,
    index: PartitionIndex,
    models: Vec<Mlp>,
    meta: EngineMeta,
}

/// Deterministic per-leaf seed derivation (splitmix64 over base + leaf).
fn leaf_seed(base: u64, leaf: usize) -> u64 {
    let mut z = base
        .wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(leaf as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl Engine {
    /// Builds the kd-tree over the labeled workload's queries and trains one
    /// model per leaf on that leaf's samples, with per-leaf normalization.
    /// Leaves train in parallel; each leaf's training is seeded from the
    /// config seed and its leaf id, so results do not depend on scheduling.
    pub fn build(
        workload: &Workload,
        height: u32,
        arch: &MlpArchitecture,
        train_config: &TrainConfig,
    ) -> Result<Engine> {
        let labels = workload
            .labels
            .as_ref()
            .ok_or_else(|| Error::Contract("engine build needs a labeled workload".into()))?;
        if arch.input_dim != workload.spec.d_pred() {
            return Err(Error::DimensionMismatch {
                context: "engine build arch input",
                expected: workload.spec.d_pred(),
                actual: arch.input_dim,
            });
        }
        if arch.output_dim != workload.spec.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "engine build arch output",
                expected: workload.spec.output_dim(),
                actual: arch.output_dim,
            });
        }
        let built = build_index(&workload.queries, height)?;

        let models: Vec<Mlp> = built
            .leaf_queries
            .par_iter()
            .enumerate()
            .map(|(leaf, members)| {
                if members.is_empty() {
                    return Err(Error::LeafWithoutSamples { leaf });
                }
                let inputs: Vec<&[f64]> = members
                    .iter()
                    .map(|&i| workload.queries[i].values())
                    .collect();
                let outputs: Vec<&[f64]> =
                    members.iter().map(|&i| labels[i].as_slice()).collect();
                let config = TrainConfig {
                    seed: leaf_seed(train_config.seed, leaf),
                    ..train_config.clone()
                };
                Ok(mlp::train(arch, &config, &inputs, &outputs)?.mlp)
            })
            .collect::<Result<_>>()?;

        let meta = EngineMeta {
            arch: arch.clone(),
            train: train_config.clone(),
            leaf_training_sizes: built.leaf_queries.iter().map(|m| m.len() as u64).collect(),
            built_unix_secs: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        Ok(Engine {
            spec: workload.spec.clone(),
            index: built.index,
            models,
            meta,
        })
    }

    pub fn spec(&self) -> &QueryFunctionSpec {
        &self.spec
    }

    pub fn index(&self) -> &PartitionIndex {
        &self.index
    }

    pub fn models(&self) -> &[Mlp] {
        &self.models
    }

    pub fn meta(&self) -> &EngineMeta {
        &self.meta
    }

    /// Total trainable parameter count: leaves x per-model parameters.
    pub fn param_count(&self) -> usize {
        self.models.iter().map(Mlp::param_count).sum()
    }

    /// Locates the query's partition and runs that model's forward pass.
    /// Output is in raw label units.
    pub fn answer(&self, q: &QueryInstance) -> Result<Vec<f64>> {
        if q.len() != self.spec.d_pred() {
            return Err(Error::DimensionMismatch {
                context: "engine answer query",
                expected: self.spec.d_pred(),
                actual: q.len(),
            });
        }
        let leaf = self.index.locate(q);
        Ok(self.models[leaf].forward(q.values()))
    }

    /// [`Engine::answer`] plus its operation counts: kd-tree comparisons
    /// (always the tree height) and forward-pass multiply-accumulates.
    pub fn answer_with_cost(&self, q: &QueryInstance) -> Result<(Vec<f64>, u32, u64)> {
        if q.len() != self.spec.d_pred() {
            return Err(Error::DimensionMismatch {
                context: "engine answer query",
                expected: self.spec.d_pred(),
                actual: q.len(),
            });
        }
        let leaf = self.index.locate(q);
        let (out, macs) = self.models[leaf].forward_with_mac_count(q.values());
        Ok((out, self.index.height(), macs))
    }

    /// Replaces one leaf's model by training afresh on the given samples.
    /// Every other leaf is untouched.
    pub fn retrain_leaf(
        &mut self,
        leaf: usize,
        inputs: &[&[f64]],
        labels: &[&[f64]],
        config: &TrainConfig,
    ) -> Result<()> {
        if leaf >= self.models.len() {
            return Err(Error::Contract(format!(
                "leaf {leaf} out of range ({} leaves)",
                self.models.len()
            )));
        }
        if inputs.is_empty() {
            return Err(Error::LeafWithoutSamples { leaf });
        }
        let config = TrainConfig {
            seed: leaf_seed(config.seed, leaf),
            ..config.clone()
        };
        self.models[leaf] = mlp::train(&self.meta.arch, &config, inputs, labels)?.mlp;
        self.meta.leaf_training_sizes[leaf] = inputs.len() as u64;
        Ok(())
    }

    /// For a k-NN point engine: snaps the model's free-space answer to its
    /// exact nearest database row, guaranteeing the output is a member of
    /// the dataset.
    pub fn knn_point_refine(
        &self,
        dataset: &crate::data::Dataset,
        q: &QueryInstance,
    ) -> Result<Vec<f64>> {
        if !matches!(self.spec.variant, QueryVariant::KnnPoint { .. }) {
            return Err(Error::Contract(
                "knn_point_refine requires a k-NN point engine".into(),
            ));
        }
        let raw = self.answer(q)?;
        let raw_q = QueryInstance::new(raw)?;
        oracle::exact_knn_point(dataset, 1, &raw_q)
    }

    /// Serialized size of the engine file, in bytes.
    pub fn storage_bytes(&self) -> u64 {
        self.to_bytes().len() as u64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut file = std::fs::File::create(path)?;
        file.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Engine> {
        let bytes = std::fs::read(path)?;
        Engine::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        write_spec(&mut out, &self.spec);
        write_index(&mut out, &self.index);
        write_meta(&mut out, &self.meta);
        put_u64(&mut out, self.models.len() as u64);
        for m in &self.models {
            write_model(&mut out, m);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Engine> {
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(Error::Truncated("file shorter than header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != trailer {
            return Err(Error::ChecksumMismatch);
        }
        let mut cur = Cursor::new(&body[4..]);
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let spec = read_spec(&mut cur)?;
        let index = read_index(&mut cur)?;
        let meta = read_meta(&mut cur)?;
        let n_models = cur.u64()? as usize;
        if n_models != index.leaf_count() {
            return Err(Error::Truncated(format!(
                "model count {n_models} does not match {} leaves",
                index.leaf_count()
            )));
        }
        let mut models = Vec::with_capacity(n_models);
        for _ in 0..n_models {
            models.push(read_model(&mut cur)?);
        }
        if !cur.at_end() {
            return Err(Error::Truncated("trailing bytes after model blocks".into()));
        }
        let engine = Engine {
            spec,
            index,
            models,
            meta,
        };
        engine.validate()?;
        Ok(engine)
    }

    fn validate(&self) -> Result<()> {
        let d_pred = self.spec.d_pred();
        if self.index.d_pred() != d_pred {
            return Err(Error::Truncated("index d_pred disagrees with spec".into()));
        }
        for m in &self.models {
            if m.input_dim() != d_pred || m.output_dim() != self.spec.output_dim() {
                return Err(Error::Truncated("model shape disagrees with spec".into()));
            }
        }
        Ok(())
    }
}

// --- binary encoding helpers ------------------------------------------------

fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(format!(
                "needed {n} bytes at offset {}, file body has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn write_spec(out: &mut Vec<u8>, spec: &QueryFunctionSpec) {
    match &spec.variant {
        QueryVariant::Raq {
            predicate,
            aggregation,
        } => {
            put_u8(out, 0);
            match predicate {
                PredicateSpec::AxisRange { active } => {
                    put_u8(out, 0);
                    put_u32(out, active.len() as u32);
                    for &a in active {
                        put_u32(out, a as u32);
                    }
                }
                PredicateSpec::HalfSpace { x_attr, y_attr } => {
                    put_u8(out, 1);
                    put_u32(out, *x_attr as u32);
                    put_u32(out, *y_attr as u32);
                }
                PredicateSpec::RotatedRectangle { x_attr, y_attr } => {
                    put_u8(out, 2);
                    put_u32(out, *x_attr as u32);
                    put_u32(out, *y_attr as u32);
                }
            }
            let kind = match aggregation.kind {
                AggKind::Count => 0u8,
                AggKind::Sum => 1,
                AggKind::Avg => 2,
                AggKind::Std => 3,
                AggKind::Median => 4,
            };
            put_u8(out, kind);
            put_u32(out, aggregation.measure_attribute as u32);
        }
        QueryVariant::KnnDistance { k, d } => {
            put_u8(out, 1);
            put_u64(out, *k as u64);
            put_u32(out, *d as u32);
        }
        QueryVariant::KnnPoint { k, d } => {
            put_u8(out, 2);
            put_u64(out, *k as u64);
            put_u32(out, *d as u32);
        }
    }
    match spec.group_by {
        Some((attr, value)) => {
            put_u8(out, 1);
            put_u32(out, attr as u32);
            put_f64(out, value);
        }
        None => put_u8(out, 0),
    }
}

fn read_spec(cur: &mut Cursor) -> Result<QueryFunctionSpec> {
    let variant = match cur.u8()? {
        0 => {
            let predicate = match cur.u8()? {
                0 => {
                    let n = cur.u32()? as usize;
                    let mut active = Vec::with_capacity(n);
                    for _ in 0..n {
                        active.push(cur.u32()? as usize);
                    }
                    PredicateSpec::AxisRange { active }
                }
                1 => PredicateSpec::HalfSpace {
                    x_attr: cur.u32()? as usize,
                    y_attr: cur.u32()? as usize,
                },
                2 => PredicateSpec::RotatedRectangle {
                    x_attr: cur.u32()? as usize,
                    y_attr: cur.u32()? as usize,
                },
                t => return Err(Error::Truncated(format!("unknown predicate tag {t}"))),
            };
            let kind = match cur.u8()? {
                0 => AggKind::Count,
                1 => AggKind::Sum,
                2 => AggKind::Avg,
                3 => AggKind::Std,
                4 => AggKind::Median,
                t => return Err(Error::Truncated(format!("unknown aggregation tag {t}"))),
            };
            let measure_attribute = cur.u32()? as usize;
            QueryVariant::Raq {
                predicate,
                aggregation: Aggregation {
                    kind,
                    measure_attribute,
                },
            }
        }
        1 => QueryVariant::KnnDistance {
            k: cur.u64()? as usize,
            d: cur.u32()? as usize,
        },
        2 => QueryVariant::KnnPoint {
            k: cur.u64()? as usize,
            d: cur.u32()? as usize,
        },
        t => return Err(Error::Truncated(format!("unknown variant tag {t}"))),
    };
    let group_by = match cur.u8()? {
        0 => None,
        1 => Some((cur.u32()? as usize, cur.f64()?)),
        t => return Err(Error::Truncated(format!("unknown group-by tag {t}"))),
    };
    Ok(QueryFunctionSpec { variant, group_by })
}

/// Index block: `d_pred`, height, then the tree as a preorder node list
/// (internal nodes carry (dim, val), leaves carry their id).
fn write_index(out: &mut Vec<u8>, index: &PartitionIndex) {
    put_u32(out, index.d_pred() as u32);
    put_u32(out, index.height());
    let n_internal = index.splits().len();
    fn emit(out: &mut Vec<u8>, splits: &[Split], n_internal: usize, node: usize) {
        if node < n_internal {
            put_u8(out, 0);
            put_u32(out, splits[node].dim);
            put_f64(out, splits[node].val);
            emit(out, splits, n_internal, 2 * node + 1);
            emit(out, splits, n_internal, 2 * node + 2);
        } else {
            put_u8(out, 1);
            put_u32(out, (node - n_internal) as u32);
        }
    }
    emit(out, index.splits(), n_internal, 0);
}

fn read_index(cur: &mut Cursor) -> Result<PartitionIndex> {
    let d_pred = cur.u32()? as usize;
    let height = cur.u32()?;
    if height > 31 {
        return Err(Error::Truncated(format!("implausible tree height {height}")));
    }
    let n_internal = (1usize << height) - 1;
    let mut splits = vec![Split { dim: 0, val: 0.0 }; n_internal];
    fn parse(
        cur: &mut Cursor,
        splits: &mut [Split],
        n_internal: usize,
        node: usize,
    ) -> Result<()> {
        match cur.u8()? {
            0 => {
                if node >= n_internal {
                    return Err(Error::Truncated("internal node below leaf level".into()));
                }
                splits[node] = Split {
                    dim: cur.u32()?,
                    val: cur.f64()?,
                };
                parse(cur, splits, n_internal, 2 * node + 1)?;
                parse(cur, splits, n_internal, 2 * node + 2)
            }
            1 => {
                let id = cur.u32()? as usize;
                if node < n_internal || id != node - n_internal {
                    return Err(Error::Truncated(format!("leaf {id} out of place")));
                }
                Ok(())
            }
            t => Err(Error::Truncated(format!("unknown node tag {t}"))),
        }
    }
    parse(cur, &mut splits, n_internal, 0)?;
    PartitionIndex::from_parts(d_pred, height, splits)
}

fn write_meta(out: &mut Vec<u8>, meta: &EngineMeta) {
    put_u32(out, meta.arch.input_dim as u32);
    put_u32(out, meta.arch.n_layers as u32);
    put_u32(out, meta.arch.first_width as u32);
    put_u32(out, meta.arch.rest_width as u32);
    put_u32(out, meta.arch.output_dim as u32);
    put_u64(out, meta.train.epochs as u64);
    put_u64(out, meta.train.batch_size as u64);
    put_f64(out, meta.train.learning_rate);
    put_u64(out, meta.train.seed);
    put_u64(out, meta.built_unix_secs);
    put_u64(out, meta.leaf_training_sizes.len() as u64);
    for &s in &meta.leaf_training_sizes {
        put_u64(out, s);
    }
}

fn read_meta(cur: &mut Cursor) -> Result<EngineMeta> {
    let arch = MlpArchitecture {
        input_dim: cur.u32()? as usize,
        n_layers: cur.u32()? as usize,
        first_width: cur.u32()? as usize,
        rest_width: cur.u32()? as usize,
        output_dim: cur.u32()? as usize,
    };
    let train = TrainConfig {
        epochs: cur.u64()? as usize,
        batch_size: cur.u64()? as usize,
        learning_rate: cur.f64()?,
        seed: cur.u64()?,
    };
    let built_unix_secs = cur.u64()?;
    let n = cur.u64()? as usize;
    let mut leaf_training_sizes = Vec::with_capacity(n);
    for _ in 0..n {
        leaf_training_sizes.push(cur.u64()?);
    }
    Ok(EngineMeta {
        arch,
        train,
        leaf_training_sizes,
        built_unix_secs,
    })
}

/// Model block: version, layer shapes, normalization statistics, then layer
/// parameters (weights row-major, then biases) as little-endian f64.
fn write_model(out: &mut Vec<u8>, mlp: &Mlp) {
    put_u32(out, MODEL_BLOCK_VERSION);
    put_u32(out, mlp.layers().len() as u32);
    for l in mlp.layers() {
        put_u32(out, l.in_dim as u32);
        put_u32(out, l.out_dim as u32);
    }
    let norm = mlp.normalization();
    for v in norm
        .input_offset
        .iter()
        .chain(&norm.input_scale)
        .chain(&norm.label_mean)
        .chain(&norm.label_std)
    {
        put_f64(out, *v);
    }
    for l in mlp.layers() {
        for w in &l.weights {
            put_f64(out, *w);
        }
        for b in &l.bias {
            put_f64(out, *b);
        }
    }
}

fn read_model(cur: &mut Cursor) -> Result<Mlp> {
    let version = cur.u32()?;
    if version != MODEL_BLOCK_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: MODEL_BLOCK_VERSION,
        });
    }
    let n_layers = cur.u32()? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(Error::Truncated(format!("implausible layer count {n_layers}")));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        shapes.push((cur.u32()? as usize, cur.u32()? as usize));
    }
    let input_dim = shapes[0].0;
    let output_dim = shapes[n_layers - 1].1;
    let mut read_vec = |n: usize| -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(cur.f64()?);
        }
        Ok(v)
    };
    let norm = Normalization {
        input_offset: read_vec(input_dim)?,
        input_scale: read_vec(input_dim)?,
        label_mean: read_vec(output_dim)?,
        label_std: read_vec(output_dim)?,
    };
    let mut layers = Vec::with_capacity(n_layers);
    for &(in_dim, out_dim) in &shapes {
        let weights = read_vec(in_dim * out_dim)?;
        let bias = read_vec(out_dim)?;
        layers.push(Layer::new(in_dim, out_dim, weights, bias)?);
    }
    let mut mlp = Mlp::from_layers(layers)?;
    mlp.set_normalization(norm);
    Ok(mlp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::oracle::label_for;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn constant_workload(n: usize, value: f64, seed: u64) -> Workload {
        let mut rng = StdRng::seed_from_u64(seed);
        let queries: Vec<QueryInstance> = (0..n)
            .map(|_| {
                QueryInstance::new(vec![
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                ])
                .unwrap()
            })
            .collect();
        let labels = vec![vec![value]; n];
        let spec = QueryFunctionSpec::raq(
            PredicateSpec::AxisRange { active: vec![0] },
            Aggregation {
                kind: AggKind::Avg,
                measure_attribute: 0,
            },
        );
        Workload::new(spec, queries, Some(labels)).unwrap()
    }

    fn quick_config(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 64,
            learning_rate: 1e-3,
            seed,
        }
    }

    #[test]
    fn height_zero_build_is_one_model() {
        let workload = constant_workload(128, 5.0, 1);
        let arch = MlpArchitecture::new(2, 3, 8, 8, 1).unwrap();
        let engine = Engine::build(&workload, 0, &arch, &quick_config(50, 3)).unwrap();
        assert_eq!(engine.models().len(), 1);
        assert_eq!(engine.meta().leaf_training_sizes, vec![128]);
    }

    #[test]
    fn constant_function_is_learned_everywhere() {
        let workload = constant_workload(512, 5.0, 2);
        let arch = MlpArchitecture::new(2, 3, 8, 8, 1).unwrap();
        let engine = Engine::build(&workload, 2, &arch, &quick_config(300, 4)).unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..50 {
            let q = QueryInstance::new(vec![
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ])
            .unwrap();
            let y = engine.answer(&q).unwrap()[0];
            assert!((y - 5.0).abs() < 1e-3, "constant engine answered {y}");
        }
    }

    #[test]
    fn balanced_leaves_at_height_two() {
        let workload = constant_workload(4096, 1.0, 7);
        let arch = MlpArchitecture::new(2, 2, 4, 4, 1).unwrap();
        let engine = Engine::build(&workload, 2, &arch, &quick_config(5, 1)).unwrap();
        assert_eq!(engine.models().len(), 4);
        for &size in &engine.meta().leaf_training_sizes {
            assert_eq!(size, 1024);
        }
    }

    #[test]
    fn identical_seeds_build_identical_engines() {
        let workload = constant_workload(256, 3.0, 5);
        let arch = MlpArchitecture::new(2, 3, 6, 6, 1).unwrap();
        let a = Engine::build(&workload, 1, &arch, &quick_config(30, 11)).unwrap();
        let b = Engine::build(&workload, 1, &arch, &quick_config(30, 11)).unwrap();
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..100 {
            let q = QueryInstance::new(vec![
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ])
            .unwrap();
            let ya = a.answer(&q).unwrap();
            let yb = b.answer(&q).unwrap();
            assert_eq!(ya[0].to_bits(), yb[0].to_bits());
        }
    }

    #[test]
    fn answering_outlives_the_dataset() {
        // Labels are produced from a dataset, the dataset is dropped, and
        // the engine still answers from its own parameters.
        let ds = Dataset::from_rows(vec![vec![1.0, 4.0], vec![2.0, 7.0], vec![3.0, 6.0]]).unwrap();
        let spec = QueryFunctionSpec::raq(
            PredicateSpec::AxisRange { active: vec![0] },
            Aggregation {
                kind: AggKind::Count,
                measure_attribute: 0,
            },
        );
        let mut rng = StdRng::seed_from_u64(3);
        let queries: Vec<QueryInstance> = (0..64)
            .map(|_| {
                let lo = rng.random_range(0.0..2.0);
                QueryInstance::new(vec![lo, lo + 1.5]).unwrap()
            })
            .collect();
        let labels: Vec<Vec<f64>> = queries
            .iter()
            .map(|q| label_for(&ds, &spec, q).unwrap().unwrap())
            .collect();
        let workload = Workload::new(spec, queries, Some(labels)).unwrap();
        drop(ds);
        let arch = MlpArchitecture::new(2, 2, 4, 4, 1).unwrap();
        let engine = Engine::build(&workload, 0, &arch, &quick_config(10, 1)).unwrap();
        let q = QueryInstance::new(vec![0.5, 2.0]).unwrap();
        assert!(engine.answer(&q).unwrap()[0].is_finite());
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let workload = constant_workload(256, 2.5, 21);
        let arch = MlpArchitecture::new(2, 3, 6, 6, 1).unwrap();
        let engine = Engine::build(&workload, 2, &arch, &quick_config(20, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("engine.nqe");
        engine.save(&path).unwrap();
        let loaded = Engine::load(&path).unwrap();
        assert_eq!(engine.spec(), loaded.spec());
        assert_eq!(engine.index(), loaded.index());
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..1000 {
            let q = QueryInstance::new(vec![
                rng.random_range(-0.2..1.2),
                rng.random_range(-0.2..1.2),
            ])
            .unwrap();
            let a = engine.answer(&q).unwrap();
            let b = loaded.answer(&q).unwrap();
            assert_eq!(a[0].to_bits(), b[0].to_bits());
        }
    }

    #[test]
    fn corrupted_parameter_byte_fails_checksum() {
        let workload = constant_workload(128, 1.0, 22);
        let arch = MlpArchitecture::new(2, 2, 4, 4, 1).unwrap();
        let engine = Engine::build(&workload, 1, &arch, &quick_config(5, 2)).unwrap();
        let mut bytes = engine.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        let err = Engine::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::ChecksumMismatch));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let workload = constant_workload(128, 1.0, 23);
        let arch = MlpArchitecture::new(2, 2, 4, 4, 1).unwrap();
        let engine = Engine::build(&workload, 0, &arch, &quick_config(5, 2)).unwrap();
        let bytes = engine.to_bytes();
        let err = Engine::from_bytes(&bytes[..bytes.len() - 40]).unwrap_err();
        // Chopping the tail invalidates the checksum (or the header for very
        // short prefixes); either way the load must fail cleanly.
        assert!(matches!(
            err,
            Error::ChecksumMismatch | Error::Truncated(_)
        ));
        assert!(matches!(
            Engine::from_bytes(&bytes[..10]).unwrap_err(),
            Error::Truncated(_)
        ));
    }

    #[test]
    fn newer_format_version_is_rejected_without_partial_load() {
        let workload = constant_workload(128, 1.0, 24);
        let arch = MlpArchitecture::new(2, 2, 4, 4, 1).unwrap();
        let engine = Engine::build(&workload, 0, &arch, &quick_config(5, 2)).unwrap();
        let mut bytes = engine.to_bytes();
        bytes.truncate(bytes.len() - 32);
        bytes[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        let err = Engine::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found, .. } if found == 2));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let err = Engine::from_bytes(&[0u8; 64]).unwrap_err();
        assert!(matches!(err, Error::BadMagic));
    }

    #[test]
    fn retraining_one_leaf_leaves_others_unchanged() {
        let workload = constant_workload(512, 4.0, 40);
        let arch = MlpArchitecture::new(2, 2, 4, 4, 1).unwrap();
        let mut engine = Engine::build(&workload, 2, &arch, &quick_config(20, 3)).unwrap();
        let baseline = engine.clone();

        // Gather the construction queries that route to leaf 0 and retrain
        // it against a different constant.
        let members: Vec<usize> = (0..workload.queries.len())
            .filter(|&i| engine.index().locate(&workload.queries[i]) == 0)
            .collect();
        let inputs: Vec<&[f64]> = members
            .iter()
            .map(|&i| workload.queries[i].values())
            .collect();
        let new_labels: Vec<Vec<f64>> = vec![vec![-1.0]; members.len()];
        let label_refs: Vec<&[f64]> = new_labels.iter().map(Vec::as_slice).collect();
        engine
            .retrain_leaf(0, &inputs, &label_refs, &quick_config(20, 99))
            .unwrap();

        for (i, q) in workload.queries.iter().enumerate() {
            let leaf = engine.index().locate(q);
            let before = baseline.answer(q).unwrap()[0];
            let after = engine.answer(q).unwrap()[0];
            if leaf == 0 {
                assert!(
                    (after - before).abs() > 1.0,
                    "leaf 0 should have moved (query {i})"
                );
            } else {
                assert_eq!(before.to_bits(), after.to_bits(), "leaf {leaf} drifted");
            }
        }
    }

    #[test]
    fn knn_point_refine_returns_dataset_rows() {
        let ds =
            Dataset::from_rows(vec![vec![1.0], vec![2.0], vec![3.0], vec![5.0], vec![6.0]])
                .unwrap();
        let spec = QueryFunctionSpec::knn_point(1, 1);
        let queries: Vec<QueryInstance> = (0..32)
            .map(|i| QueryInstance::new(vec![i as f64 / 5.0]).unwrap())
            .collect();
        let labels: Vec<Vec<f64>> = queries
            .iter()
            .map(|q| label_for(&ds, &spec, q).unwrap().unwrap())
            .collect();
        let workload = Workload::new(spec, queries, Some(labels)).unwrap();
        let arch = MlpArchitecture::new(1, 2, 4, 4, 1).unwrap();
        let engine = Engine::build(&workload, 0, &arch, &quick_config(100, 5)).unwrap();
        let rows: Vec<f64> = vec![1.0, 2.0, 3.0, 5.0, 6.0];
        for i in 0..40 {
            let q = QueryInstance::new(vec![i as f64 / 6.0]).unwrap();
            let refined = engine.knn_point_refine(&ds, &q).unwrap();
            assert!(rows.contains(&refined[0]), "refined answer must be a row");
        }
    }

    #[test]
    fn refine_is_identity_on_exact_answers() {
        // If the raw answer already equals a dataset row, refinement keeps it.
        let ds = Dataset::from_rows(vec![vec![1.0], vec![2.0], vec![5.0]]).unwrap();
        let q = QueryInstance::new(vec![5.0]).unwrap();
        let refined = oracle::exact_knn_point(&ds, 1, &q).unwrap();
        assert_eq!(refined, vec![5.0]);
        // ...and a raw answer of 4.2 snaps to 5.
        let q = QueryInstance::new(vec![4.2]).unwrap();
        assert_eq!(oracle::exact_knn_point(&ds, 1, &q).unwrap(), vec![5.0]);
    }

    #[test]
    fn storage_scales_with_leaf_count() {
        let workload = constant_workload(512, 1.0, 50);
        let arch = MlpArchitecture::new(2, 3, 8, 4, 1).unwrap();
        let per_model = arch.param_count();
        for h in [0u32, 1, 2] {
            let engine = Engine::build(&workload, h, &arch, &quick_config(2, 1)).unwrap();
            assert_eq!(engine.param_count(), (1 << h) * per_model);
        }
    }

    #[test]
    fn answer_cost_is_height_plus_forward_macs() {
        let workload = constant_workload(256, 1.0, 51);
        let arch = MlpArchitecture::new(2, 3, 8, 4, 1).unwrap();
        let engine = Engine::build(&workload, 3, &arch, &quick_config(2, 1)).unwrap();
        let q = QueryInstance::new(vec![0.3, 0.4]).unwrap();
        let (_, comparisons, macs) = engine.answer_with_cost(&q).unwrap();
        assert_eq!(comparisons, 3);
        assert_eq!(macs as usize, arch.param_count());
    }
}
