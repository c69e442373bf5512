//! Persistent on-disk block store with named pins and mark-and-sweep GC.
//!
//! Layout under the store root:
//!
//! ```text
//! blocks/<shard>/<rendered cid>   raw block bytes
//! pins                            {"pins":{"<name>":"<cid>",...},"version":1}
//! ```
//!
//! `<shard>` is the two characters preceding the last character of the
//! rendered CID. Every rendered CID starts with the same few characters, so
//! the tail is where the entropy is.

use crate::blocks::{BlockSink, BlockSource};
use crate::cid::Cid;
use crate::dag::DagNode;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock, TryLockError};

const PINS_VERSION: u32 = 1;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcReport {
    pub deleted: u64,
    pub retained: u64,
    pub bytes_freed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PinFile {
    version: u32,
    pins: BTreeMap<String, Cid>,
}

#[derive(Debug)]
pub struct BlockStore {
    root: PathBuf,
    // serializes read-modify-write of the pins file
    pin_lock: Mutex<()>,
    // shared by gets and puts, exclusive for gc
    gate: RwLock<()>,
}

/// Writes `data` to `path` atomically via a sibling temp file.
pub(crate) fn write_atomic(path: &Path, data: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(data)?;
        f.sync_data()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

impl BlockStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("blocks"))?;
        let store = Self {
            root,
            pin_lock: Mutex::new(()),
            gate: RwLock::new(()),
        };
        if !store.pins_path().exists() {
            store.write_pins(&BTreeMap::new())?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn pins_path(&self) -> PathBuf {
        self.root.join("pins")
    }

    /// Where the block for `cid` lives on disk.
    pub fn block_path(&self, cid: &Cid) -> PathBuf {
        let name = cid.render();
        let n = name.len();
        self.root.join("blocks").join(&name[n - 3..n - 1]).join(name)
    }

    fn shared(&self) -> std::sync::RwLockReadGuard<'_, ()> {
        self.gate.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn put(&self, bytes: &[u8], codec: u64) -> Result<Cid> {
        let cid = Cid::of_block(bytes, codec)?;
        let _g = self.shared();
        self.write_block(&cid, bytes)?;
        Ok(cid)
    }

    fn write_block(&self, cid: &Cid, bytes: &[u8]) -> Result<()> {
        let path = self.block_path(cid);
        if path.exists() {
            return Ok(());
        }
        fs::create_dir_all(path.parent().expect("block path has a parent"))?;
        write_atomic(&path, bytes)?;
        Ok(())
    }

    fn read_block(&self, cid: &Cid) -> Result<Vec<u8>> {
        let bytes = match fs::read(self.block_path(cid)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(Error::BlockNotFound(*cid)),
            Err(e) => return Err(e.into()),
        };
        if !cid.verify(&bytes) {
            return Err(Error::CorruptBlock(*cid));
        }
        Ok(bytes)
    }

    /// Returns the block bytes, re-verified against `cid`.
    pub fn get(&self, cid: &Cid) -> Result<Vec<u8>> {
        let _g = self.shared();
        self.read_block(cid)
    }

    pub fn has(&self, cid: &Cid) -> bool {
        let _g = self.shared();
        self.block_path(cid).is_file()
    }

    /// All stored CIDs, sorted.
    pub fn cids(&self) -> Result<Vec<Cid>> {
        let _g = self.shared();
        self.list_blocks()
    }

    fn list_blocks(&self) -> Result<Vec<Cid>> {
        let mut out = Vec::new();
        for shard in fs::read_dir(self.root.join("blocks"))? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for entry in fs::read_dir(shard.path())? {
                let name = entry?.file_name();
                let Some(name) = name.to_str() else { continue };
                if let Ok(cid) = Cid::parse(name) {
                    out.push(cid);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    fn read_pins(&self) -> Result<BTreeMap<String, Cid>> {
        let text = fs::read_to_string(self.pins_path())?;
        let file: PinFile = serde_json::from_str(&text)?;
        if file.version != PINS_VERSION {
            return Err(Error::Config(format!("unsupported pins version {}", file.version)));
        }
        Ok(file.pins)
    }

    fn write_pins(&self, pins: &BTreeMap<String, Cid>) -> Result<()> {
        let file = PinFile {
            version: PINS_VERSION,
            pins: pins.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        write_atomic(&self.pins_path(), text.as_bytes())?;
        Ok(())
    }

    /// Records `name -> root`, replacing an existing pin of the same name.
    /// The root block must be present.
    pub fn pin(&self, name: &str, root: &Cid) -> Result<()> {
        let _g = self.shared();
        let _p = self.pin_lock.lock().unwrap_or_else(|e| e.into_inner());
        if !self.block_path(root).is_file() {
            return Err(Error::BlockNotFound(*root));
        }
        let mut pins = self.read_pins()?;
        pins.insert(name.to_string(), *root);
        self.write_pins(&pins)
    }

    pub fn unpin(&self, name: &str) -> Result<Cid> {
        let _g = self.shared();
        let _p = self.pin_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut pins = self.read_pins()?;
        let cid = pins
            .remove(name)
            .ok_or_else(|| Error::NoSuchPin(name.to_string()))?;
        self.write_pins(&pins)?;
        Ok(cid)
    }

    pub fn list_pins(&self) -> Result<BTreeMap<String, Cid>> {
        let _p = self.pin_lock.lock().unwrap_or_else(|e| e.into_inner());
        self.read_pins()
    }

    /// Deletes every block not reachable from a pin.
    ///
    /// Fails with [`Error::Busy`] if any other operation holds the store, and
    /// with [`Error::CorruptBlock`] (deleting nothing) if an interior node on
    /// a pinned path cannot be decoded.
    pub fn gc(&self) -> Result<GcReport> {
        let _g = match self.gate.try_write() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(Error::Busy),
            Err(TryLockError::Poisoned(e)) => e.into_inner(),
        };
        let pins = {
            let _p = self.pin_lock.lock().unwrap_or_else(|e| e.into_inner());
            self.read_pins()?
        };

        let mut marked = HashSet::new();
        let mut stack: Vec<Cid> = pins.values().copied().collect();
        while let Some(cid) = stack.pop() {
            if !marked.insert(cid) || cid.is_raw() {
                continue;
            }
            let bytes = match self.read_block(&cid) {
                Ok(b) => b,
                // nothing to keep below a block that isn't here
                Err(Error::BlockNotFound(_)) => continue,
                Err(e) => return Err(e),
            };
            let node = DagNode::decode(&bytes).map_err(|_| Error::CorruptBlock(cid))?;
            stack.extend(node.links().iter().map(|l| l.cid));
        }

        let mut report = GcReport::default();
        for cid in self.list_blocks()? {
            if marked.contains(&cid) {
                report.retained += 1;
                continue;
            }
            let path = self.block_path(&cid);
            let len = fs::metadata(&path)?.len();
            fs::remove_file(&path)?;
            report.deleted += 1;
            report.bytes_freed += len;
        }
        Ok(report)
    }
}

impl BlockSource for BlockStore {
    fn get_block(&self, cid: &Cid) -> Result<Vec<u8>> {
        self.get(cid)
    }

    fn has_block(&self, cid: &Cid) -> Result<bool> {
        Ok(self.has(cid))
    }
}

impl BlockSink for BlockStore {
    fn put_block(&self, cid: &Cid, data: &[u8]) -> Result<()> {
        if !cid.verify(data) {
            return Err(Error::CorruptBlock(*cid));
        }
        let _g = self.shared();
        self.write_block(cid, data)
    }
}
