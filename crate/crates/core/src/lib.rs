//! Content-addressed storage engine for ML assets.
//!
//! Blocks are named by [`Cid`]s, files are laid out as balanced Merkle DAGs
//! over fixed-size chunks, and everything above that (the mutable namespace,
//! gateways, datasets, the asset registry) is built from those two pieces.

pub mod blocks;
pub mod cid;
pub mod dag;
pub mod dataset;
pub mod mfs;
pub mod net;
pub mod registry;
pub mod store;
pub mod vfs;
mod error;

pub use cid::Cid;
pub use error::{Error, Result};
