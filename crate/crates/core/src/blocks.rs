//! Block source/sink abstractions shared by the DAG builder, the stores and
//! the network client.

use crate::cid::Cid;
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

/// Something blocks can be read from.
///
/// Implementations return the stored bytes; callers that need integrity
/// (the DAG walker, the dataset reader) verify them against the CID.
pub trait BlockSource {
    fn get_block(&self, cid: &Cid) -> Result<Vec<u8>>;

    fn has_block(&self, cid: &Cid) -> Result<bool> {
        match self.get_block(cid) {
            Ok(_) => Ok(true),
            Err(Error::BlockNotFound(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }
}

/// Something blocks can be written to.
///
/// Must tolerate concurrent puts of distinct blocks and idempotent re-puts of
/// identical ones.
pub trait BlockSink {
    fn put_block(&self, cid: &Cid, data: &[u8]) -> Result<()>;
}

impl<T: BlockSource + ?Sized> BlockSource for &T {
    fn get_block(&self, cid: &Cid) -> Result<Vec<u8>> {
        (**self).get_block(cid)
    }
    fn has_block(&self, cid: &Cid) -> Result<bool> {
        (**self).has_block(cid)
    }
}

impl<T: BlockSource + ?Sized> BlockSource for Arc<T> {
    fn get_block(&self, cid: &Cid) -> Result<Vec<u8>> {
        (**self).get_block(cid)
    }
    fn has_block(&self, cid: &Cid) -> Result<bool> {
        (**self).has_block(cid)
    }
}

impl<T: BlockSink + ?Sized> BlockSink for &T {
    fn put_block(&self, cid: &Cid, data: &[u8]) -> Result<()> {
        (**self).put_block(cid, data)
    }
}

impl<T: BlockSink + ?Sized> BlockSink for Arc<T> {
    fn put_block(&self, cid: &Cid, data: &[u8]) -> Result<()> {
        (**self).put_block(cid, data)
    }
}

/// Discards everything; used to compute roots without storing blocks.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl BlockSink for NullSink {
    fn put_block(&self, _cid: &Cid, _data: &[u8]) -> Result<()> {
        Ok(())
    }
}

/// In-memory block map.
#[derive(Debug, Default)]
pub struct MemoryStore {
    blocks: RwLock<HashMap<Cid, Arc<[u8]>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blocks.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cids(&self) -> Vec<Cid> {
        let mut cids: Vec<Cid> = self.blocks.read().unwrap().keys().copied().collect();
        cids.sort();
        cids
    }

    pub fn remove(&self, cid: &Cid) -> bool {
        self.blocks.write().unwrap().remove(cid).is_some()
    }

    /// Replaces a block's bytes without checking them. Test hook for
    /// simulating corruption.
    pub fn overwrite_unchecked(&self, cid: &Cid, data: &[u8]) {
        self.blocks.write().unwrap().insert(*cid, data.into());
    }
}

impl BlockSource for MemoryStore {
    fn get_block(&self, cid: &Cid) -> Result<Vec<u8>> {
        self.blocks
            .read()
            .unwrap()
            .get(cid)
            .map(|b| b.to_vec())
            .ok_or(Error::BlockNotFound(*cid))
    }

    fn has_block(&self, cid: &Cid) -> Result<bool> {
        Ok(self.blocks.read().unwrap().contains_key(cid))
    }
}

impl BlockSink for MemoryStore {
    fn put_block(&self, cid: &Cid, data: &[u8]) -> Result<()> {
        if !cid.verify(data) {
            return Err(Error::CorruptBlock(*cid));
        }
        self.blocks
            .write()
            .unwrap()
            .entry(*cid)
            .or_insert_with(|| data.into());
        Ok(())
    }
}

/// Reads from `primary` and falls back to `secondary` when a block is absent.
#[derive(Debug)]
pub struct Layered<A, B> {
    pub primary: A,
    pub secondary: B,
}

impl<A: BlockSource, B: BlockSource> BlockSource for Layered<A, B> {
    fn get_block(&self, cid: &Cid) -> Result<Vec<u8>> {
        match self.primary.get_block(cid) {
            Err(Error::BlockNotFound(_)) => self.secondary.get_block(cid),
            other => other,
        }
    }
}

/// Wraps a source and counts `get_block` calls.
#[derive(Debug)]
pub struct CountingSource<S> {
    inner: S,
    gets: std::sync::atomic::AtomicUsize,
}

impl<S> CountingSource<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            gets: Default::default(),
        }
    }

    pub fn gets(&self) -> usize {
        self.gets.load(std::sync::atomic::Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.gets.store(0, std::sync::atomic::Ordering::SeqCst);
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: BlockSource> BlockSource for CountingSource<S> {
    fn get_block(&self, cid: &Cid) -> Result<Vec<u8>> {
        self.gets.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.get_block(cid)
    }
}
