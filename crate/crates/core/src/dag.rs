//! Fixed-size chunking and the balanced Merkle DAG file layout.
//!
//! Leaves are raw blocks (codec `0x55`). Interior nodes and directories use
//! the CDN1 wire format:
//!
//! ```text
//! "CDN1" | node_type u8 | link_count u32 BE
//!   per link: cid_len u16 BE | cid | name_len u16 BE | name | subtree_size u64 BE
//! total_size u64 BE
//! ```
//!
//! A file that fits in one chunk is represented by its leaf alone.

use crate::blocks::{BlockSink, BlockSource, NullSink};
use crate::cid::Cid;
use crate::error::{Error, Result};
use std::io::{self, Read};

pub const MAGIC: &[u8; 4] = b"CDN1";
pub const DEFAULT_CHUNK_SIZE: usize = 1 << 20;
pub const DATASET_CHUNK_SIZE: usize = 16 << 20;
pub const DEFAULT_FANOUT: usize = 32;

const NODE_FILE_INTERIOR: u8 = 0x01;
const NODE_DIRECTORY: u8 = 0x02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkParams {
    chunk_size: usize,
    fanout: usize,
}

impl ChunkParams {
    pub fn new(chunk_size: usize, fanout: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::InvalidParams("chunk_size must be at least 1".into()));
        }
        if fanout < 2 {
            return Err(Error::InvalidParams("fanout must be at least 2".into()));
        }
        Ok(Self { chunk_size, fanout })
    }

    /// 16 MiB leaves, the dataset default.
    pub fn dataset() -> Self {
        Self {
            chunk_size: DATASET_CHUNK_SIZE,
            fanout: DEFAULT_FANOUT,
        }
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            fanout: DEFAULT_FANOUT,
        }
    }
}

/// Iterator over fixed-size chunks of a reader. Every chunk is full except
/// possibly the last; an empty reader yields nothing.
#[derive(Debug)]
pub struct Chunker<R> {
    reader: R,
    chunk_size: usize,
    done: bool,
}

impl<R: Read> Chunker<R> {
    pub fn new(reader: R, chunk_size: usize) -> Self {
        assert!(chunk_size > 0, "chunk_size must be positive");
        Self {
            reader,
            chunk_size,
            done: false,
        }
    }

    fn fill(&mut self) -> io::Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(self.chunk_size.min(1 << 24));
        let mut limited = (&mut self.reader).take(self.chunk_size as u64);
        limited.read_to_end(&mut buf)?;
        Ok(buf)
    }
}

impl<R: Read> Iterator for Chunker<R> {
    type Item = io::Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.fill() {
            Ok(buf) if buf.is_empty() => {
                self.done = true;
                None
            }
            Ok(buf) => {
                if buf.len() < self.chunk_size {
                    self.done = true;
                }
                Some(Ok(buf))
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn chunk_stream<R: Read>(reader: R, params: ChunkParams) -> Result<Vec<Vec<u8>>> {
    Chunker::new(reader, params.chunk_size)
        .collect::<io::Result<Vec<_>>>()
        .map_err(Error::Io)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    FileInterior,
    Directory,
}

impl NodeKind {
    fn tag(self) -> u8 {
        match self {
            NodeKind::FileInterior => NODE_FILE_INTERIOR,
            NodeKind::Directory => NODE_DIRECTORY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub cid: Cid,
    pub name: String,
    pub size: u64,
}

impl Link {
    pub fn unnamed(cid: Cid, size: u64) -> Self {
        Self {
            cid,
            name: String::new(),
            size,
        }
    }

    pub fn named(name: impl Into<String>, cid: Cid, size: u64) -> Self {
        Self {
            cid,
            name: name.into(),
            size,
        }
    }
}

/// Valid directory entry name: non-empty, no `/`, not `.` or `..`, and
/// short enough for the u16 length field.
pub fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains('/') || name == "." || name == ".." || name.len() > u16::MAX as usize {
        return Err(Error::InvalidName(name.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagNode {
    kind: NodeKind,
    links: Vec<Link>,
    total_size: u64,
}

impl DagNode {
    pub fn file(links: Vec<Link>) -> Result<Self> {
        Self::with_links(NodeKind::FileInterior, links)
    }

    /// Builds a directory, sorting the entries by name.
    pub fn directory(mut links: Vec<Link>) -> Result<Self> {
        links.sort_by(|a, b| a.name.as_bytes().cmp(b.name.as_bytes()));
        Self::with_links(NodeKind::Directory, links)
    }

    pub fn empty_directory() -> Self {
        Self {
            kind: NodeKind::Directory,
            links: Vec::new(),
            total_size: 0,
        }
    }

    fn with_links(kind: NodeKind, links: Vec<Link>) -> Result<Self> {
        let total_size = links
            .iter()
            .try_fold(0u64, |acc, l| acc.checked_add(l.size))
            .ok_or_else(|| Error::MalformedNode("total size overflows".into()))?;
        let node = Self {
            kind,
            links,
            total_size,
        };
        node.validate()?;
        Ok(node)
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            NodeKind::FileInterior => {
                if self.links.iter().any(|l| !l.name.is_empty()) {
                    return Err(Error::MalformedNode("file link with a name".into()));
                }
            }
            NodeKind::Directory => {
                for link in &self.links {
                    check_name(&link.name).map_err(|_| {
                        Error::MalformedNode(format!("bad directory entry name {:?}", link.name))
                    })?;
                }
                let sorted = self
                    .links
                    .windows(2)
                    .all(|w| w[0].name.as_bytes() < w[1].name.as_bytes());
                if !sorted {
                    return Err(Error::MalformedNode(
                        "directory entries not strictly sorted".into(),
                    ));
                }
            }
        }
        let sum = self.links.iter().try_fold(0u64, |acc, l| acc.checked_add(l.size));
        if sum != Some(self.total_size) {
            return Err(Error::MalformedNode("total_size does not match links".into()));
        }
        Ok(())
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn into_links(self) -> Vec<Link> {
        self.links
    }

    pub fn total_size(&self) -> u64 {
        self.total_size
    }

    pub fn find(&self, name: &str) -> Option<&Link> {
        self.links
            .binary_search_by(|l| l.name.as_bytes().cmp(name.as_bytes()))
            .ok()
            .map(|i| &self.links[i])
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.links.len() * 60);
        out.extend_from_slice(MAGIC);
        out.push(self.kind.tag());
        out.extend_from_slice(&(self.links.len() as u32).to_be_bytes());
        for link in &self.links {
            let cid = link.cid.to_bytes();
            out.extend_from_slice(&(cid.len() as u16).to_be_bytes());
            out.extend_from_slice(&cid);
            out.extend_from_slice(&(link.name.len() as u16).to_be_bytes());
            out.extend_from_slice(link.name.as_bytes());
            out.extend_from_slice(&link.size.to_be_bytes());
        }
        out.extend_from_slice(&self.total_size.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: bytes };
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let kind = match r.u8()? {
            NODE_FILE_INTERIOR => NodeKind::FileInterior,
            NODE_DIRECTORY => NodeKind::Directory,
            other => return Err(Error::MalformedNode(format!("unknown node type {other:#04x}"))),
        };
        let count = r.u32()? as usize;
        // each link needs at least 12 bytes of length fields
        let mut links = Vec::with_capacity(count.min(r.buf.len() / 12));
        for _ in 0..count {
            let cid_len = r.u16()? as usize;
            let cid = Cid::from_bytes(r.take(cid_len)?)
                .map_err(|e| Error::MalformedNode(format!("bad link CID: {e}")))?;
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::MalformedNode("link name is not UTF-8".into()))?
                .to_string();
            let size = r.u64()?;
            links.push(Link { cid, name, size });
        }
        let total_size = r.u64()?;
        if !r.buf.is_empty() {
            return Err(Error::MalformedNode("trailing bytes".into()));
        }
        let node = Self {
            kind,
            links,
            total_size,
        };
        node.validate()?;
        Ok(node)
    }

    /// Encodes the node and returns it with its CID.
    pub fn to_block(&self) -> (Cid, Vec<u8>) {
        let bytes = self.encode();
        (Cid::node(&bytes), bytes)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Links reachable from one block: none for raw leaves, the decoded links
/// for interior nodes.
pub fn child_links(cid: &Cid, bytes: &[u8]) -> Result<Vec<Link>> {
    if cid.is_raw() {
        Ok(Vec::new())
    } else {
        Ok(DagNode::decode(bytes)?.into_links())
    }
}

/// Chunks `reader`, stores leaves and interior nodes in `sink`, and returns
/// the root CID.
///
/// Levels are built bottom-up: each level groups the previous one into runs
/// of `fanout` nodes, left to right, until a single root remains.
pub fn build_file_dag<R: Read, S: BlockSink + ?Sized>(
    reader: R,
    params: ChunkParams,
    sink: &S,
) -> Result<Cid> {
    let mut level = Vec::new();
    for chunk in Chunker::new(reader, params.chunk_size) {
        let chunk = chunk?;
        let cid = Cid::raw(&chunk);
        sink.put_block(&cid, &chunk)?;
        level.push(Link::unnamed(cid, chunk.len() as u64));
    }
    if level.is_empty() {
        let cid = Cid::raw(&[]);
        sink.put_block(&cid, &[])?;
        return Ok(cid);
    }
    while level.len() > 1 {
        let mut parents = Vec::with_capacity(level.len().div_ceil(params.fanout));
        for run in level.chunks(params.fanout) {
            let node = DagNode::file(run.to_vec())?;
            let (cid, bytes) = node.to_block();
            sink.put_block(&cid, &bytes)?;
            parents.push(Link::unnamed(cid, node.total_size));
        }
        level = parents;
    }
    Ok(level[0].cid)
}

pub fn build_file_dag_bytes<S: BlockSink + ?Sized>(
    data: &[u8],
    params: ChunkParams,
    sink: &S,
) -> Result<Cid> {
    build_file_dag(data, params, sink)
}

/// Root CID `data` would get under `params`, without storing anything.
pub fn compute_root(data: &[u8], params: ChunkParams) -> Cid {
    build_file_dag(data, params, &NullSink).expect("in-memory build cannot fail")
}

/// Fetches one block and checks it against its CID.
pub fn fetch_verified<S: BlockSource + ?Sized>(source: &S, cid: &Cid) -> Result<Vec<u8>> {
    let bytes = source.get_block(cid)?;
    if !cid.verify(&bytes) {
        return Err(Error::CorruptBlock(*cid));
    }
    Ok(bytes)
}

/// Depth-first walk over a file DAG yielding leaf payloads in order.
#[derive(Debug)]
pub struct FileWalker<S> {
    source: S,
    // (cid, expected subtree size); popped from the back
    stack: Vec<(Cid, Option<u64>)>,
}

impl<S: BlockSource> FileWalker<S> {
    pub fn new(root: Cid, source: S) -> Self {
        Self {
            source,
            stack: vec![(root, None)],
        }
    }

    /// Next non-empty leaf payload, or `None` at end of file.
    pub fn next_chunk(&mut self) -> Result<Option<Vec<u8>>> {
        while let Some((cid, expected)) = self.stack.pop() {
            let bytes = fetch_verified(&self.source, &cid)?;
            if cid.is_raw() {
                if expected.is_some_and(|n| n != bytes.len() as u64) {
                    return Err(Error::MalformedNode(format!(
                        "leaf {cid} size does not match its link"
                    )));
                }
                if bytes.is_empty() {
                    continue;
                }
                return Ok(Some(bytes));
            }
            let node = DagNode::decode(&bytes)?;
            if node.kind() == NodeKind::Directory {
                return Err(Error::IsDirectory(cid.to_string()));
            }
            if expected.is_some_and(|n| n != node.total_size()) {
                return Err(Error::MalformedNode(format!(
                    "node {cid} size does not match its link"
                )));
            }
            self.stack
                .extend(node.links().iter().rev().map(|l| (l.cid, Some(l.size))));
        }
        Ok(None)
    }

    pub fn into_reader(self) -> FileReader<S> {
        FileReader {
            walker: self,
            buf: Vec::new(),
            pos: 0,
        }
    }
}

/// `Read` adapter over [`FileWalker`]. Engine errors are wrapped in
/// `io::Error`; recover them with [`Error::from_io`].
#[derive(Debug)]
pub struct FileReader<S> {
    walker: FileWalker<S>,
    buf: Vec<u8>,
    pos: usize,
}

impl<S: BlockSource> Read for FileReader<S> {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if out.is_empty() {
            return Ok(0);
        }
        while self.pos >= self.buf.len() {
            match self.walker.next_chunk().map_err(Error::into_io)? {
                Some(chunk) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                None => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Streams the file rooted at `root` into `out`, verifying every block.
pub fn reassemble_to<S: BlockSource, W: io::Write>(root: Cid, source: S, out: &mut W) -> Result<u64> {
    let mut walker = FileWalker::new(root, source);
    let mut written = 0u64;
    while let Some(chunk) = walker.next_chunk()? {
        out.write_all(&chunk)?;
        written += chunk.len() as u64;
    }
    Ok(written)
}

pub fn reassemble<S: BlockSource>(root: Cid, source: S) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    reassemble_to(root, source, &mut out)?;
    Ok(out)
}

/// What a CID refers to once its first block is inspected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    File,
    Dir,
}

impl std::fmt::Display for EntryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EntryKind::File => "file",
            EntryKind::Dir => "dir",
        })
    }
}

/// Kind and total size of the DAG rooted at `cid`.
pub fn describe<S: BlockSource + ?Sized>(source: &S, cid: &Cid) -> Result<(EntryKind, u64)> {
    let bytes = fetch_verified(source, cid)?;
    if cid.is_raw() {
        return Ok((EntryKind::File, bytes.len() as u64));
    }
    let node = DagNode::decode(&bytes)?;
    let kind = match node.kind() {
        NodeKind::FileInterior => EntryKind::File,
        NodeKind::Directory => EntryKind::Dir,
    };
    Ok((kind, node.total_size()))
}

/// Every CID reachable from `root` (including it), in DFS pre-order.
/// Fails on missing or corrupt blocks.
pub fn reachable<S: BlockSource + ?Sized>(source: &S, root: &Cid) -> Result<Vec<Cid>> {
    let mut seen = std::collections::HashSet::new();
    let mut order = Vec::new();
    let mut stack = vec![*root];
    while let Some(cid) = stack.pop() {
        if !seen.insert(cid) {
            continue;
        }
        order.push(cid);
        if !cid.is_raw() {
            let bytes = fetch_verified(source, &cid)?;
            let node = DagNode::decode(&bytes)?;
            stack.extend(node.links().iter().rev().map(|l| l.cid));
        }
    }
    Ok(order)
}
