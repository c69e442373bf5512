//! One filesystem-style API over two address spaces:
//!
//! - `mfs://<path>`: the local mutable namespace (read/write)
//! - `cad://<cid>[/<path>]`: immutable content, resolved from the local
//!   store first and then from the configured gateways (read-only)
//!
//! Writes through [`Vfs::open_write`] are buffered and become visible in one
//! root swap when the sink is closed.

use crate::blocks::BlockSource;
use crate::cid::Cid;
use crate::dag::{self, DagNode, EntryKind, FileReader, FileWalker, NodeKind};
use crate::error::{Error, Result};
use crate::mfs::{self, CpSource, Entry, Mfs, MfsStore, MfsWriter, Stat};
use crate::net::GatewayClient;
use crate::store::BlockStore;
use std::collections::HashSet;
use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

pub const MFS_SCHEME: &str = "mfs://";
pub const CAD_SCHEME: &str = "cad://";

/// File under the store root holding the namespace's current root CID.
pub const MFS_ROOT_FILE: &str = "mfs-root";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum VfsPath {
    /// Normalized absolute namespace path (`/` for the root).
    Mfs(String),
    Cad { cid: Cid, path: Vec<String> },
}

impl VfsPath {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix(MFS_SCHEME) {
            let parts = mfs::components(rest)?;
            Ok(VfsPath::Mfs(format!("/{}", parts.join("/"))))
        } else if let Some(rest) = s.strip_prefix(CAD_SCHEME) {
            let (cid, tail) = rest.split_once('/').unwrap_or((rest, ""));
            let cid = Cid::parse(cid)?;
            let path = mfs::components(tail)?.into_iter().map(String::from).collect();
            Ok(VfsPath::Cad { cid, path })
        } else {
            Err(Error::InvalidPath(format!("{s:?}: expected {MFS_SCHEME} or {CAD_SCHEME}")))
        }
    }

    pub fn is_mfs(&self) -> bool {
        matches!(self, VfsPath::Mfs(_))
    }

    fn writable(&self) -> Result<&str> {
        match self {
            VfsPath::Mfs(p) => Ok(p),
            VfsPath::Cad { .. } => Err(Error::ReadOnly(self.to_string())),
        }
    }
}

impl fmt::Display for VfsPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VfsPath::Mfs(p) => write!(f, "mfs://{p}"),
            VfsPath::Cad { cid, path } => {
                write!(f, "cad://{cid}")?;
                path.iter().try_for_each(|p| write!(f, "/{p}"))
            }
        }
    }
}

impl FromStr for VfsPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Local store first, gateways second.
pub struct Resolver<'a, S> {
    local: &'a S,
    remote: Option<&'a GatewayClient>,
}

impl<S: BlockSource> BlockSource for Resolver<'_, S> {
    fn get_block(&self, cid: &Cid) -> Result<Vec<u8>> {
        match (self.local.get_block(cid), self.remote) {
            (Err(Error::BlockNotFound(_)), Some(remote)) => remote.fetch_block(cid),
            (result, _) => result,
        }
    }
}

pub struct Vfs<S> {
    mfs: Mfs<S>,
    remote: Option<GatewayClient>,
}

impl<S> fmt::Debug for Vfs<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vfs").field("remote", &self.remote).finish_non_exhaustive()
    }
}

impl Vfs<Arc<BlockStore>> {
    /// Opens the store at `root` with its persisted namespace.
    pub fn open(root: &Path, remote: Option<GatewayClient>) -> Result<Self> {
        let store = Arc::new(BlockStore::open(root)?);
        let mfs = Mfs::new(store, Some(root.join(MFS_ROOT_FILE)))?;
        Ok(Self::new(mfs, remote))
    }
}

impl<S: MfsStore> Vfs<S> {
    pub fn new(mfs: Mfs<S>, remote: Option<GatewayClient>) -> Self {
        Self { mfs, remote }
    }

    pub fn mfs(&self) -> &Mfs<S> {
        &self.mfs
    }

    pub fn store(&self) -> &S {
        self.mfs.store()
    }

    pub fn remote(&self) -> Option<&GatewayClient> {
        self.remote.as_ref()
    }

    pub fn resolver(&self) -> Resolver<'_, S> {
        Resolver {
            local: self.mfs.store(),
            remote: self.remote.as_ref(),
        }
    }

    fn resolve_cad(&self, cid: Cid, path: &[String]) -> Result<Stat> {
        let source = self.resolver();
        let mut current = cid;
        let mut size = None;
        for (i, name) in path.iter().enumerate() {
            let missing = || Error::NotFound(format!("{cid}/{}", path[..=i].join("/")));
            if current.is_raw() {
                return Err(Error::NotADirectory(format!("{cid}/{}", path[..i].join("/"))));
            }
            let node = DagNode::decode(&dag::fetch_verified(&source, &current)?)?;
            if node.kind() != NodeKind::Directory {
                return Err(Error::NotADirectory(format!("{cid}/{}", path[..i].join("/"))));
            }
            let link = node.find(name).ok_or_else(missing)?;
            current = link.cid;
            size = Some(link.size);
        }
        let (kind, described) = dag::describe(&source, &current)?;
        Ok(Stat {
            cid: current,
            size: size.unwrap_or(described),
            kind,
        })
    }

    /// Resolves a path to its CID, size and kind.
    pub fn info(&self, path: &VfsPath) -> Result<Stat> {
        match path {
            VfsPath::Mfs(p) => self.mfs.stat(p),
            VfsPath::Cad { cid, path } => self.resolve_cad(*cid, path),
        }
    }

    /// Whether `path` resolves. Never writes to the store.
    pub fn exists(&self, path: &VfsPath) -> Result<bool> {
        match self.info(path) {
            Ok(_) => Ok(true),
            Err(Error::NotFound(_) | Error::NotADirectory(_) | Error::BlockNotFound(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    pub fn open_read(&self, path: &VfsPath) -> Result<FileReader<Resolver<'_, S>>> {
        let stat = self.info(path)?;
        if stat.kind == EntryKind::Dir {
            return Err(Error::IsDirectory(path.to_string()));
        }
        Ok(FileWalker::new(stat.cid, self.resolver()).into_reader())
    }

    pub fn cat(&self, path: &VfsPath) -> Result<Vec<u8>> {
        let stat = self.info(path)?;
        if stat.kind == EntryKind::Dir {
            return Err(Error::IsDirectory(path.to_string()));
        }
        dag::reassemble(stat.cid, self.resolver())
    }

    pub fn ls(&self, path: &VfsPath) -> Result<Vec<Entry>> {
        let (cid, path) = match path {
            VfsPath::Mfs(p) => return self.mfs.ls(p),
            VfsPath::Cad { cid, path } => (*cid, path),
        };
        let stat = self.resolve_cad(cid, path)?;
        if stat.kind == EntryKind::File {
            return Ok(vec![Entry {
                name: path.last().cloned().unwrap_or_else(|| cid.render()),
                cid: stat.cid,
                size: stat.size,
                kind: stat.kind,
            }]);
        }
        let source = self.resolver();
        let node = DagNode::decode(&dag::fetch_verified(&source, &stat.cid)?)?;
        node.links()
            .iter()
            .map(|l| {
                Ok(Entry {
                    name: l.name.clone(),
                    cid: l.cid,
                    size: l.size,
                    kind: dag::describe(&source, &l.cid)?.0,
                })
            })
            .collect()
    }

    /// Copies into the namespace. Remote content is first stored locally so
    /// the namespace never points at blocks the store lacks.
    pub fn cp(&self, src: &VfsPath, dst: &VfsPath) -> Result<Cid> {
        let dst = dst.writable()?;
        match src {
            VfsPath::Mfs(p) => self.mfs.cp(CpSource::Path(p), dst),
            VfsPath::Cad { .. } => {
                let stat = self.info(src)?;
                self.materialize(&stat.cid)?;
                self.mfs.cp(CpSource::Cid(stat.cid), dst)
            }
        }
    }

    /// Copies every block reachable from `root` into the local store.
    pub fn materialize(&self, root: &Cid) -> Result<usize> {
        let source = self.resolver();
        let store = self.mfs.store();
        let mut seen = HashSet::new();
        let mut stack = vec![*root];
        let mut copied = 0;
        while let Some(cid) = stack.pop() {
            if !seen.insert(cid) {
                continue;
            }
            let bytes = dag::fetch_verified(&source, &cid)?;
            if !store.has_block(&cid)? {
                store.put_block(&cid, &bytes)?;
                copied += 1;
            }
            stack.extend(dag::child_links(&cid, &bytes)?.into_iter().map(|l| l.cid));
        }
        Ok(copied)
    }

    pub fn rm(&self, path: &VfsPath) -> Result<Cid> {
        self.mfs.rm(path.writable()?)
    }

    pub fn mkdir(&self, path: &VfsPath, parents: bool) -> Result<Cid> {
        self.mfs.mkdir(path.writable()?, parents)
    }

    pub fn mv(&self, src: &VfsPath, dst: &VfsPath) -> Result<Cid> {
        self.mfs.mv(src.writable()?, dst.writable()?)
    }

    /// Opens a buffered sink for `path`. Holds the namespace's writer lock
    /// until closed, so a second sink (or any other mutation) gets
    /// [`Error::Busy`].
    pub fn open_write(&self, path: &VfsPath) -> Result<VfsWriter<'_, S>> {
        let target = path.writable()?.to_string();
        let writer = self.mfs.writer()?;
        match self.mfs.stat(&target) {
            Ok(stat) if stat.kind == EntryKind::Dir => return Err(Error::IsDirectory(target)),
            Ok(_) | Err(Error::NotFound(_)) => {}
            Err(e) => return Err(e),
        }
        Ok(VfsWriter {
            writer: Some(writer),
            path: target,
            buf: Vec::new(),
        })
    }
}

/// Buffered file sink. [`VfsWriter::close`] commits and reports errors;
/// dropping an unclosed sink commits too but can only discard failures.
pub struct VfsWriter<'a, S: MfsStore> {
    writer: Option<MfsWriter<'a, S>>,
    path: String,
    buf: Vec<u8>,
}

impl<S: MfsStore> fmt::Debug for VfsWriter<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VfsWriter")
            .field("path", &self.path)
            .field("buffered", &self.buf.len())
            .finish()
    }
}

impl<S: MfsStore> VfsWriter<'_, S> {
    /// Builds the file, links it into the namespace and returns the new
    /// namespace root.
    pub fn close(mut self) -> Result<Cid> {
        self.commit()
    }

    fn commit(&mut self) -> Result<Cid> {
        let writer = self.writer.take().expect("sink already closed");
        writer.write(&self.path, &std::mem::take(&mut self.buf))
    }
}

impl<S: MfsStore> Write for VfsWriter<'_, S> {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        self.buf.extend_from_slice(data);
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl<S: MfsStore> Drop for VfsWriter<'_, S> {
    fn drop(&mut self) {
        if self.writer.is_some() {
            let _ = self.commit();
        }
    }
}
