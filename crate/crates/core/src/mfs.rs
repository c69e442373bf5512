//! Mutable, path-addressed namespace over immutable directory DAGs.
//!
//! Every mutation rewrites only the directories on the path from the changed
//! entry up to the root, stores them, and swaps the root CID. Directories are
//! sorted and deterministic, so equal trees always have equal roots.
//!
//! Paths are `/`-separated and absolute from the namespace root; a missing
//! leading slash is accepted. Parents must exist unless a call asks for them
//! to be created.

use crate::blocks::{BlockSink, BlockSource, MemoryStore};
use crate::cid::Cid;
use crate::dag::{self, check_name, ChunkParams, DagNode, EntryKind, FileReader, FileWalker, Link, NodeKind};
use crate::error::{Error, Result};
use crate::store::{write_atomic, BlockStore};
use std::io::Read;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, RwLock, TryLockError};

/// Pin name under which a disk-backed namespace keeps its current root.
pub const MFS_PIN: &str = "mfs:root";

/// Storage a namespace can live on.
pub trait MfsStore: BlockSource + BlockSink {
    /// Keeps `root` alive across garbage collection.
    fn retain_root(&self, root: &Cid) -> Result<()>;
}

impl MfsStore for BlockStore {
    fn retain_root(&self, root: &Cid) -> Result<()> {
        self.pin(MFS_PIN, root)
    }
}

impl MfsStore for MemoryStore {
    fn retain_root(&self, _root: &Cid) -> Result<()> {
        Ok(())
    }
}

impl<T: MfsStore + ?Sized> MfsStore for Arc<T> {
    fn retain_root(&self, root: &Cid) -> Result<()> {
        (**self).retain_root(root)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Entry {
    pub name: String,
    pub cid: Cid,
    pub size: u64,
    pub kind: EntryKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Stat {
    pub cid: Cid,
    pub size: u64,
    pub kind: EntryKind,
}

/// Source of a copy: another namespace path or any DAG in the store.
#[derive(Debug, Clone)]
pub enum CpSource<'a> {
    Path(&'a str),
    Cid(Cid),
}

/// Splits a namespace path into validated components. `/` and `` are the
/// root.
pub fn components(path: &str) -> Result<Vec<&str>> {
    let trimmed = path.strip_prefix('/').unwrap_or(path);
    let trimmed = trimmed.strip_suffix('/').unwrap_or(trimmed);
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split('/')
        .map(|c| check_name(c).map(|_| c))
        .collect()
}

fn display(parts: &[&str]) -> String {
    format!("/{}", parts.join("/"))
}

#[derive(Debug)]
pub struct Mfs<S> {
    store: S,
    root: RwLock<Cid>,
    root_file: Option<PathBuf>,
    writer: Mutex<()>,
    params: ChunkParams,
}

impl Mfs<MemoryStore> {
    /// Volatile namespace over a fresh in-memory store.
    pub fn in_memory() -> Self {
        Self::new(MemoryStore::new(), None).expect("in-memory namespace")
    }
}

impl<S: MfsStore> Mfs<S> {
    /// Opens the namespace whose root is persisted in `root_file`, creating
    /// an empty one if the file does not exist yet.
    pub fn new(store: S, root_file: Option<PathBuf>) -> Result<Self> {
        let persisted = match &root_file {
            Some(path) if path.exists() => {
                let text = std::fs::read_to_string(path)?;
                Some(Cid::parse(text.trim())?)
            }
            _ => None,
        };
        let root = match persisted {
            Some(root) => {
                let bytes = dag::fetch_verified(&store, &root)?;
                if root.is_raw() || DagNode::decode(&bytes)?.kind() != NodeKind::Directory {
                    return Err(Error::NotADirectory(format!("namespace root {root}")));
                }
                root
            }
            None => {
                let (cid, bytes) = DagNode::empty_directory().to_block();
                store.put_block(&cid, &bytes)?;
                cid
            }
        };
        let mfs = Self {
            store,
            root: RwLock::new(root),
            root_file,
            writer: Mutex::new(()),
            params: ChunkParams::default(),
        };
        mfs.commit(root)?;
        Ok(mfs)
    }

    pub fn with_params(mut self, params: ChunkParams) -> Self {
        self.params = params;
        self
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn params(&self) -> ChunkParams {
        self.params
    }

    pub fn root(&self) -> Cid {
        *self.root.read().unwrap_or_else(|e| e.into_inner())
    }

    fn commit(&self, root: Cid) -> Result<()> {
        self.store.retain_root(&root)?;
        if let Some(path) = &self.root_file {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            write_atomic(path, format!("{root}\n").as_bytes())?;
        }
        *self.root.write().unwrap_or_else(|e| e.into_inner()) = root;
        Ok(())
    }

    /// Takes the single-writer lock; fails with [`Error::Busy`] if another
    /// writer holds it.
    pub fn writer(&self) -> Result<MfsWriter<'_, S>> {
        let guard = match self.writer.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(Error::Busy),
            Err(TryLockError::Poisoned(e)) => e.into_inner(),
        };
        Ok(MfsWriter {
            mfs: self,
            _guard: guard,
        })
    }

    pub fn mkdir(&self, path: &str, parents: bool) -> Result<Cid> {
        self.writer()?.mkdir(path, parents)
    }

    pub fn write(&self, path: &str, data: &[u8]) -> Result<Cid> {
        self.writer()?.write(path, data)
    }

    pub fn write_from<R: Read>(&self, path: &str, reader: R) -> Result<Cid> {
        self.writer()?.write_from(path, reader)
    }

    pub fn cp(&self, src: CpSource<'_>, dst: &str) -> Result<Cid> {
        self.writer()?.cp(src, dst)
    }

    pub fn mv(&self, src: &str, dst: &str) -> Result<Cid> {
        self.writer()?.mv(src, dst)
    }

    pub fn rm(&self, path: &str) -> Result<Cid> {
        self.writer()?.rm(path)
    }

    fn load_dir(&self, cid: &Cid, at: &[&str]) -> Result<DagNode> {
        if cid.is_raw() {
            return Err(Error::NotADirectory(display(at)));
        }
        let node = DagNode::decode(&dag::fetch_verified(&self.store, cid)?)?;
        if node.kind() != NodeKind::Directory {
            return Err(Error::NotADirectory(display(at)));
        }
        Ok(node)
    }

    fn resolve_parts(&self, root: Cid, parts: &[&str]) -> Result<Stat> {
        let mut current = Stat {
            cid: root,
            size: 0,
            kind: EntryKind::Dir,
        };
        if parts.is_empty() {
            current.size = self.load_dir(&root, parts)?.total_size();
            return Ok(current);
        }
        for i in 0..parts.len() {
            let node = self.load_dir(&current.cid, &parts[..i])?;
            let link = node
                .find(parts[i])
                .ok_or_else(|| Error::NotFound(display(&parts[..=i])))?;
            current = Stat {
                cid: link.cid,
                size: link.size,
                kind: EntryKind::File,
            };
        }
        current.kind = dag::describe(&self.store, &current.cid)?.0;
        Ok(current)
    }

    pub fn stat(&self, path: &str) -> Result<Stat> {
        self.resolve_parts(self.root(), &components(path)?)
    }

    pub fn ls(&self, path: &str) -> Result<Vec<Entry>> {
        let parts = components(path)?;
        let stat = self.resolve_parts(self.root(), &parts)?;
        if stat.kind == EntryKind::File {
            return Ok(vec![Entry {
                name: parts.last().map(|s| s.to_string()).unwrap_or_default(),
                cid: stat.cid,
                size: stat.size,
                kind: stat.kind,
            }]);
        }
        let node = self.load_dir(&stat.cid, &parts)?;
        node.links()
            .iter()
            .map(|l| {
                Ok(Entry {
                    name: l.name.clone(),
                    cid: l.cid,
                    size: l.size,
                    kind: dag::describe(&self.store, &l.cid)?.0,
                })
            })
            .collect()
    }

    /// Streams a file's bytes.
    pub fn open(&self, path: &str) -> Result<FileReader<&S>> {
        let stat = self.stat(path)?;
        if stat.kind == EntryKind::Dir {
            return Err(Error::IsDirectory(path.to_string()));
        }
        Ok(FileWalker::new(stat.cid, &self.store).into_reader())
    }

    pub fn read(&self, path: &str) -> Result<Vec<u8>> {
        let stat = self.stat(path)?;
        if stat.kind == EntryKind::Dir {
            return Err(Error::IsDirectory(path.to_string()));
        }
        dag::reassemble(stat.cid, &self.store)
    }

    /// Rewrites the directory chain down to `parts`' parent and applies `f`
    /// to the entry named by the last component. Returns the new root and
    /// its total size.
    fn edit(
        &self,
        dir: Cid,
        parts: &[&str],
        depth: usize,
        parents: bool,
        f: &mut dyn FnMut(Option<&Link>) -> Result<Option<Link>>,
    ) -> Result<(Cid, u64)> {
        let node = if dir == empty_dir_cid() && depth > 0 {
            DagNode::empty_directory()
        } else {
            self.load_dir(&dir, &parts[..depth])?
        };
        let name = parts[depth];
        let existing = node.find(name).cloned();
        let replacement = if depth + 1 == parts.len() {
            f(existing.as_ref())?
        } else {
            let child = match existing.as_ref() {
                Some(link) => link.cid,
                None if parents => empty_dir_cid(),
                None => return Err(Error::NotFound(display(&parts[..=depth]))),
            };
            let (cid, size) = self.edit(child, parts, depth + 1, parents, f)?;
            Some(Link::named(name, cid, size))
        };
        if replacement.is_none() && existing.is_none() {
            return Ok((dir, node.total_size()));
        }
        let mut links: Vec<Link> = node.into_links().into_iter().filter(|l| l.name != name).collect();
        links.extend(replacement);
        let node = DagNode::directory(links)?;
        let (cid, bytes) = node.to_block();
        self.store.put_block(&cid, &bytes)?;
        Ok((cid, node.total_size()))
    }
}

fn empty_dir_cid() -> Cid {
    static EMPTY: std::sync::OnceLock<Cid> = std::sync::OnceLock::new();
    *EMPTY.get_or_init(|| DagNode::empty_directory().to_block().0)
}

/// Exclusive handle for mutating a namespace.
pub struct MfsWriter<'a, S> {
    mfs: &'a Mfs<S>,
    _guard: MutexGuard<'a, ()>,
}

impl<S> std::fmt::Debug for MfsWriter<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfsWriter").finish_non_exhaustive()
    }
}

impl<S: MfsStore> MfsWriter<'_, S> {
    fn apply(
        &self,
        root: Cid,
        parts: &[&str],
        parents: bool,
        mut f: impl FnMut(Option<&Link>) -> Result<Option<Link>>,
    ) -> Result<Cid> {
        Ok(self.mfs.edit(root, parts, 0, parents, &mut f)?.0)
    }

    fn store_empty_dir(&self) -> Result<()> {
        let (cid, bytes) = DagNode::empty_directory().to_block();
        self.mfs.store.put_block(&cid, &bytes)
    }

    pub fn mkdir(&self, path: &str, parents: bool) -> Result<Cid> {
        let parts = components(path)?;
        if parts.is_empty() {
            return if parents { Ok(self.mfs.root()) } else { Err(Error::Exists("/".into())) };
        }
        self.store_empty_dir()?;
        let empty = empty_dir_cid();
        let root = self.apply(self.mfs.root(), &parts, parents, |existing| match existing {
            None => Ok(Some(Link::named(*parts.last().unwrap(), empty, 0))),
            Some(link) if parents && dag::describe(&self.mfs.store, &link.cid)?.0 == EntryKind::Dir => {
                Ok(Some(link.clone()))
            }
            Some(_) => Err(Error::Exists(display(&parts))),
        })?;
        self.mfs.commit(root)?;
        Ok(root)
    }

    pub fn write(&self, path: &str, data: &[u8]) -> Result<Cid> {
        self.write_from(path, data)
    }

    /// Writes a file, replacing an existing file at `path`.
    pub fn write_from<R: Read>(&self, path: &str, reader: R) -> Result<Cid> {
        let parts = components(path)?;
        if parts.is_empty() {
            return Err(Error::IsDirectory("/".into()));
        }
        // check the destination before doing any chunking work
        self.check_writable(&parts)?;
        let mut counting = CountingReader { inner: reader, n: 0 };
        let file = dag::build_file_dag(&mut counting, self.mfs.params, &self.mfs.store)?;
        self.link_parts(&parts, file, counting.n, true)
    }

    fn check_writable(&self, parts: &[&str]) -> Result<()> {
        let root = self.mfs.root();
        let parent = self.mfs.resolve_parts(root, &parts[..parts.len() - 1])?;
        if parent.kind != EntryKind::Dir {
            return Err(Error::NotADirectory(display(&parts[..parts.len() - 1])));
        }
        match self.mfs.resolve_parts(root, parts) {
            Ok(stat) if stat.kind == EntryKind::Dir => Err(Error::IsDirectory(display(parts))),
            Ok(_) | Err(Error::NotFound(_)) => Ok(()),
            Err(e) => Err(e),
        }
    }

    /// Points `path` at an existing DAG of `size` bytes. With `replace`, an
    /// existing file is overwritten; otherwise any existing entry is an error.
    pub fn link(&self, path: &str, cid: Cid, size: u64, replace: bool) -> Result<Cid> {
        let parts = components(path)?;
        if parts.is_empty() {
            return Err(Error::Exists("/".into()));
        }
        self.link_parts(&parts, cid, size, replace)
    }

    fn link_parts(&self, parts: &[&str], cid: Cid, size: u64, replace: bool) -> Result<Cid> {
        let name = *parts.last().unwrap();
        let root = self.apply(self.mfs.root(), parts, false, |existing| match existing {
            None => Ok(Some(Link::named(name, cid, size))),
            Some(_) if !replace => Err(Error::Exists(display(parts))),
            Some(link) => match dag::describe(&self.mfs.store, &link.cid)?.0 {
                EntryKind::Dir => Err(Error::IsDirectory(display(parts))),
                EntryKind::File => Ok(Some(Link::named(name, cid, size))),
            },
        })?;
        self.mfs.commit(root)?;
        Ok(root)
    }

    /// Copies a path or a stored DAG to `dst`, which must not exist.
    pub fn cp(&self, src: CpSource<'_>, dst: &str) -> Result<Cid> {
        let (cid, size) = match src {
            CpSource::Path(p) => {
                let stat = self.mfs.stat(p)?;
                (stat.cid, stat.size)
            }
            CpSource::Cid(cid) => {
                let (_, size) = dag::describe(&self.mfs.store, &cid)?;
                (cid, size)
            }
        };
        self.link(dst, cid, size, false)
    }

    /// Removes `src` then inserts it at `dst`, committing once.
    pub fn mv(&self, src: &str, dst: &str) -> Result<Cid> {
        let src_parts = components(src)?;
        let dst_parts = components(dst)?;
        if src_parts.is_empty() {
            return Err(Error::InvalidPath("cannot move the root".into()));
        }
        if dst_parts.is_empty() {
            return Err(Error::Exists("/".into()));
        }
        let stat = self.mfs.resolve_parts(self.mfs.root(), &src_parts)?;
        let without = self.apply(self.mfs.root(), &src_parts, false, |_| Ok(None))?;
        let name = *dst_parts.last().unwrap();
        let root = self.apply(without, &dst_parts, false, |existing| match existing {
            None => Ok(Some(Link::named(name, stat.cid, stat.size))),
            Some(_) => Err(Error::Exists(display(&dst_parts))),
        })?;
        self.mfs.commit(root)?;
        Ok(root)
    }

    /// Removes a file or a whole directory.
    pub fn rm(&self, path: &str) -> Result<Cid> {
        let parts = components(path)?;
        if parts.is_empty() {
            return Err(Error::InvalidPath("cannot remove the root".into()));
        }
        let root = self.apply(self.mfs.root(), &parts, false, |existing| match existing {
            None => Err(Error::NotFound(display(&parts))),
            Some(_) => Ok(None),
        })?;
        self.mfs.commit(root)?;
        Ok(root)
    }
}

struct CountingReader<R> {
    inner: R,
    n: u64,
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.n += n as u64;
        Ok(n)
    }
}
