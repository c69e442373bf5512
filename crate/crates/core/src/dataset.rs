//! Columnar datasets split into content-addressed chunks, with a reader that
//! fetches only the chunks a requested sample lives in.
//!
//! On the DAG a dataset is a directory:
//!
//! ```text
//! <root>/
//!   manifest          canonical JSON (sorted keys, no whitespace)
//!   <column>/000000   chunk leaves, 6-digit ordinals
//!   <column>/000001
//! ```
//!
//! Fixed-shape samples never straddle a chunk: when the next sample does
//! not fit, a new chunk starts. Their location is therefore arithmetic.
//! Variable-length samples are packed the same way, except that a sample
//! larger than a whole chunk is split into fragments over consecutive
//! chunks; those columns carry an explicit index.

use crate::blocks::{BlockSink, BlockSource};
use crate::cid::Cid;
use crate::dag::{self, ChunkParams, DagNode, Link, NodeKind, DATASET_CHUNK_SIZE};
use crate::error::{Error, Result};
use lru::LruCache;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_ENTRY: &str = "manifest";
pub const DEFAULT_CACHE_CHUNKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    I32,
    I64,
    F32,
    F64,
    Bytes,
}

impl Dtype {
    pub fn size(self) -> u64 {
        match self {
            Dtype::U8 | Dtype::Bytes => 1,
            Dtype::I32 | Dtype::F32 => 4,
            Dtype::I64 | Dtype::F64 => 8,
        }
    }
}

/// Per-sample shape. Serialized as a list of dimensions or `"variable"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ShapeRepr", into = "ShapeRepr")]
pub enum Shape {
    Fixed(Vec<u64>),
    Variable,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ShapeRepr {
    Fixed(Vec<u64>),
    Tag(String),
}

impl TryFrom<ShapeRepr> for Shape {
    type Error = String;

    fn try_from(r: ShapeRepr) -> Result<Self, String> {
        match r {
            ShapeRepr::Fixed(dims) => Ok(Shape::Fixed(dims)),
            ShapeRepr::Tag(t) if t == "variable" => Ok(Shape::Variable),
            ShapeRepr::Tag(t) => Err(format!("unknown shape {t:?}")),
        }
    }
}

impl From<Shape> for ShapeRepr {
    fn from(s: Shape) -> Self {
        match s {
            Shape::Fixed(dims) => ShapeRepr::Fixed(dims),
            Shape::Variable => ShapeRepr::Tag("variable".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Shape,
}

impl ColumnSpec {
    pub fn fixed(name: impl Into<String>, dtype: Dtype, shape: Vec<u64>) -> Self {
        Self {
            name: name.into(),
            dtype,
            shape: Shape::Fixed(shape),
        }
    }

    pub fn variable(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            dtype: Dtype::Bytes,
            shape: Shape::Variable,
        }
    }

    /// Bytes per sample, or `None` for variable-length columns.
    pub fn sample_nbytes(&self) -> Option<u64> {
        match &self.shape {
            Shape::Fixed(dims) => Some(self.dtype.size() * dims.iter().product::<u64>()),
            Shape::Variable => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        dag::check_name(&self.name)?;
        if self.name == MANIFEST_ENTRY {
            return Err(Error::InvalidName(self.name.clone()));
        }
        match &self.shape {
            Shape::Fixed(dims) if dims.contains(&0) => Err(Error::ShapeMismatch(format!(
                "column {}: dimensions must be positive, got {dims:?}",
                self.name
            ))),
            Shape::Variable if self.dtype != Dtype::Bytes => Err(Error::ShapeMismatch(format!(
                "column {}: variable shape requires dtype bytes",
                self.name
            ))),
            _ => Ok(()),
        }
    }
}

/// What the caller supplies to [`create_dataset`]: everything but the
/// sample count and the chunk locations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: u64,
    pub columns: Vec<ColumnSpec>,
    /// Checked against the data when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_samples: Option<u64>,
}

fn default_chunk_size() -> u64 {
    DATASET_CHUNK_SIZE as u64
}

impl DatasetSpec {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnSpec>) -> Self {
        Self {
            name: name.into(),
            chunk_size: default_chunk_size(),
            columns,
            num_samples: None,
        }
    }

    pub fn with_chunk_size(mut self, chunk_size: u64) -> Self {
        self.chunk_size = chunk_size;
        self
    }
}

/// A contiguous piece of a sample inside one chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub chunk: u32,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnIndex {
    /// Sample `i` is at chunk `i / samples_per_chunk`, offset
    /// `(i % samples_per_chunk) * sample_nbytes`.
    Arithmetic { sample_nbytes: u64, samples_per_chunk: u64 },
    /// Fragments per sample, in order. An empty sample has none.
    Explicit { samples: Vec<Vec<Fragment>> },
}

impl ColumnIndex {
    pub fn locate(&self, i: u64) -> Vec<Fragment> {
        match self {
            ColumnIndex::Arithmetic {
                sample_nbytes,
                samples_per_chunk,
            } => vec![Fragment {
                chunk: (i / samples_per_chunk) as u32,
                offset: (i % samples_per_chunk) * sample_nbytes,
                len: *sample_nbytes,
            }],
            ColumnIndex::Explicit { samples } => samples[i as usize].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub num_samples: u64,
    pub chunk_size: u64,
    pub columns: Vec<ColumnSpec>,
    pub column_indexes: BTreeMap<String, ColumnIndex>,
    pub chunk_cids: BTreeMap<String, Vec<Cid>>,
}

impl DatasetManifest {
    /// Canonical bytes: sorted keys, no insignificant whitespace.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("manifest serializes");
        serde_json::to_vec(&value).expect("value serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: Self = serde_json::from_slice(bytes)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::MalformedNode(format!(
                "unsupported manifest format_version {}",
                m.format_version
            )));
        }
        for col in &m.columns {
            let covered = match m.column_indexes.get(&col.name) {
                Some(ColumnIndex::Explicit { samples }) => samples.len() as u64 == m.num_samples,
                Some(ColumnIndex::Arithmetic { samples_per_chunk, .. }) => *samples_per_chunk > 0,
                None => false,
            };
            if !covered || !m.chunk_cids.contains_key(&col.name) {
                return Err(Error::MalformedNode(format!("manifest index for column {}", col.name)));
            }
        }
        Ok(m)
    }

    pub fn column(&self, name: &str) -> Result<&ColumnSpec> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::NoSuchColumn(name.to_string()))
    }
}

/// Sample data for one column.
#[derive(Debug, Clone, Copy)]
pub enum ColumnData<'a> {
    /// Concatenated fixed-size samples.
    Fixed(&'a [u8]),
    /// One slice per sample.
    Variable(&'a [&'a [u8]]),
}

struct Packed {
    index: ColumnIndex,
    chunks: Vec<Vec<u8>>,
}

fn pack_fixed(col: &ColumnSpec, data: &[u8], chunk_size: u64) -> Result<(u64, Packed)> {
    let nbytes = col.sample_nbytes().expect("fixed column");
    if nbytes > chunk_size {
        return Err(Error::SampleTooLarge(format!(
            "column {}: {nbytes}-byte samples exceed chunk size {chunk_size}",
            col.name
        )));
    }
    if data.len() as u64 % nbytes != 0 {
        return Err(Error::ShapeMismatch(format!(
            "column {}: {} bytes is not a multiple of the {nbytes}-byte sample size",
            col.name,
            data.len()
        )));
    }
    let per_chunk = chunk_size / nbytes;
    let chunk_bytes = (per_chunk * nbytes) as usize;
    let chunks = data.chunks(chunk_bytes).map(<[u8]>::to_vec).collect();
    let index = ColumnIndex::Arithmetic {
        sample_nbytes: nbytes,
        samples_per_chunk: per_chunk,
    };
    Ok((data.len() as u64 / nbytes, Packed { index, chunks }))
}

fn pack_variable(samples: &[&[u8]], chunk_size: u64) -> Packed {
    let cap = chunk_size as usize;
    let mut chunks: Vec<Vec<u8>> = Vec::new();
    let mut current: Vec<u8> = Vec::new();
    let mut entries = Vec::with_capacity(samples.len());
    for sample in samples {
        if sample.is_empty() {
            entries.push(Vec::new());
            continue;
        }
        let fits_whole_chunk = sample.len() <= cap;
        if !current.is_empty() && (!fits_whole_chunk || current.len() + sample.len() > cap) {
            chunks.push(std::mem::take(&mut current));
        }
        let mut frags = Vec::new();
        for piece in sample.chunks(cap) {
            if current.len() == cap {
                chunks.push(std::mem::take(&mut current));
            }
            frags.push(Fragment {
                chunk: chunks.len() as u32,
                offset: current.len() as u64,
                len: piece.len() as u64,
            });
            current.extend_from_slice(piece);
        }
        entries.push(frags);
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    Packed {
        index: ColumnIndex::Explicit { samples: entries },
        chunks,
    }
}

/// Name of chunk `i` inside a column directory.
pub fn chunk_name(i: usize) -> String {
    format!("{i:06}")
}

/// Packs, stores and links a dataset; returns its root directory CID.
pub fn create_dataset<S: BlockSink + ?Sized>(spec: &DatasetSpec, data: &[ColumnData<'_>], sink: &S) -> Result<Cid> {
    Ok(build_dataset(spec, data, sink)?.0)
}

/// Like [`create_dataset`], also returning the stored manifest.
pub fn build_dataset<S: BlockSink + ?Sized>(
    spec: &DatasetSpec,
    data: &[ColumnData<'_>],
    sink: &S,
) -> Result<(Cid, DatasetManifest)> {
    if spec.chunk_size == 0 || spec.chunk_size > u32::MAX as u64 {
        return Err(Error::InvalidParams(format!("chunk size {}", spec.chunk_size)));
    }
    if spec.columns.len() != data.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} columns declared, data for {}",
            spec.columns.len(),
            data.len()
        )));
    }
    let mut names = HashSet::new();
    let mut num_samples = spec.num_samples;
    let mut packed = Vec::with_capacity(data.len());
    for (col, data) in spec.columns.iter().zip(data) {
        col.validate()?;
        if !names.insert(col.name.as_str()) {
            return Err(Error::InvalidName(format!("duplicate column {}", col.name)));
        }
        let (n, p) = match (&col.shape, data) {
            (Shape::Fixed(_), ColumnData::Fixed(bytes)) => pack_fixed(col, bytes, spec.chunk_size)?,
            (Shape::Variable, ColumnData::Variable(samples)) => {
                (samples.len() as u64, pack_variable(samples, spec.chunk_size))
            }
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "column {}: data kind does not match its shape",
                    col.name
                )))
            }
        };
        match num_samples {
            Some(expected) if expected != n => {
                return Err(Error::ShapeMismatch(format!(
                    "column {} has {n} samples, expected {expected}",
                    col.name
                )))
            }
            _ => num_samples = Some(n),
        }
        packed.push(p);
    }

    let mut manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        name: spec.name.clone(),
        num_samples: num_samples.unwrap_or(0),
        chunk_size: spec.chunk_size,
        columns: spec.columns.clone(),
        column_indexes: BTreeMap::new(),
        chunk_cids: BTreeMap::new(),
    };
    let mut root_links = Vec::new();
    for (col, p) in spec.columns.iter().zip(packed) {
        let mut links = Vec::with_capacity(p.chunks.len());
        let mut cids = Vec::with_capacity(p.chunks.len());
        let mut total = 0;
        for (i, chunk) in p.chunks.iter().enumerate() {
            let cid = Cid::raw(chunk);
            sink.put_block(&cid, chunk)?;
            links.push(Link::named(chunk_name(i), cid, chunk.len() as u64));
            cids.push(cid);
            total += chunk.len() as u64;
        }
        let (dir, bytes) = DagNode::directory(links)?.to_block();
        sink.put_block(&dir, &bytes)?;
        root_links.push(Link::named(col.name.clone(), dir, total));
        manifest.column_indexes.insert(col.name.clone(), p.index);
        manifest.chunk_cids.insert(col.name.clone(), cids);
    }
    let text = manifest.to_canonical_json();
    let manifest_cid = dag::build_file_dag_bytes(&text, ChunkParams::default(), sink)?;
    root_links.push(Link::named(MANIFEST_ENTRY, manifest_cid, text.len() as u64));
    let (root, bytes) = DagNode::directory(root_links)?.to_block();
    sink.put_block(&root, &bytes)?;
    Ok((root, manifest))
}

/// One sample's bytes; `shape` is set for fixed-shape columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub data: Vec<u8>,
    pub dtype: Dtype,
    pub shape: Option<Vec<u64>>,
}

/// Order for [`DatasetReader::iterate`].
#[derive(Debug, Clone)]
pub enum Order {
    Sequential,
    Permutation(Vec<u64>),
}

type ChunkCache = LruCache<u32, Arc<Vec<u8>>>;

/// Lazy reader: opening fetches the root and manifest; each sample then
/// costs at most the chunks it lives in, minus cache hits.
pub struct DatasetReader<S> {
    root: Cid,
    source: S,
    manifest: DatasetManifest,
    caches: Mutex<HashMap<String, ChunkCache>>,
    capacity: NonZeroUsize,
}

impl<S> std::fmt::Debug for DatasetReader<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DatasetReader")
            .field("root", &self.root)
            .field("name", &self.manifest.name)
            .finish_non_exhaustive()
    }
}

impl<S: BlockSource> DatasetReader<S> {
    /// `cache_chunks` is the per-column LRU capacity (at least 1).
    pub fn open(root: Cid, source: S, cache_chunks: usize) -> Result<Self> {
        let node = DagNode::decode(&dag::fetch_verified(&source, &root)?)?;
        if node.kind() != NodeKind::Directory {
            return Err(Error::NotADirectory(root.render()));
        }
        let link = node
            .find(MANIFEST_ENTRY)
            .ok_or_else(|| Error::NotFound(format!("{root}/{MANIFEST_ENTRY}")))?;
        let manifest = DatasetManifest::from_json(&dag::reassemble(link.cid, &source)?)?;
        Ok(Self {
            root,
            source,
            manifest,
            caches: Mutex::new(HashMap::new()),
            capacity: NonZeroUsize::new(cache_chunks.max(1)).unwrap(),
        })
    }

    pub fn root(&self) -> Cid {
        self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn num_samples(&self) -> u64 {
        self.manifest.num_samples
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    fn chunk(&self, column: &str, ordinal: u32) -> Result<Arc<Vec<u8>>> {
        {
            let mut caches = self.caches.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(hit) = caches.get_mut(column).and_then(|c| c.get(&ordinal)) {
                return Ok(hit.clone());
            }
        }
        let cid = self.manifest.chunk_cids[column]
            .get(ordinal as usize)
            .ok_or_else(|| Error::MalformedNode(format!("column {column} has no chunk {ordinal}")))?;
        let bytes = Arc::new(dag::fetch_verified(&self.source, cid)?);
        let mut caches = self.caches.lock().unwrap_or_else(|e| e.into_inner());
        caches
            .entry(column.to_string())
            .or_insert_with(|| LruCache::new(self.capacity))
            .put(ordinal, bytes.clone());
        Ok(bytes)
    }

    pub fn get_sample(&self, column: &str, i: u64) -> Result<Sample> {
        let spec = self.manifest.column(column)?;
        if i >= self.manifest.num_samples {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.manifest.num_samples,
            });
        }
        let mut data = Vec::new();
        for frag in self.manifest.column_indexes[column].locate(i) {
            let chunk = self.chunk(column, frag.chunk)?;
            let piece = chunk
                .get(frag.offset as usize..(frag.offset + frag.len) as usize)
                .ok_or_else(|| Error::MalformedNode(format!("sample {i} of {column} lies outside its chunk")))?;
            data.extend_from_slice(piece);
        }
        let shape = match &spec.shape {
            Shape::Fixed(dims) => Some(dims.clone()),
            Shape::Variable => None,
        };
        Ok(Sample {
            data,
            dtype: spec.dtype,
            shape,
        })
    }

    /// Streams samples of `column` in `order`.
    pub fn iterate<'a>(&'a self, column: &'a str, order: Order) -> impl Iterator<Item = Result<Sample>> + 'a {
        let indices: Box<dyn Iterator<Item = u64>> = match order {
            Order::Sequential => Box::new(0..self.manifest.num_samples),
            Order::Permutation(p) => Box::new(p.into_iter()),
        };
        indices.map(move |i| self.get_sample(column, i))
    }
}
