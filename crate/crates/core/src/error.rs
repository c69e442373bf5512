use crate::cid::Cid;
use std::io;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the engine.
///
/// Variants are shared across modules because failures travel across layers:
/// a missing leaf surfaces from `reassemble` whether the block source is the
/// local store or a remote gateway.
#[derive(Debug, Error)]
pub enum Error {
    // identifiers
    #[error("unsupported codec 0x{0:x}")]
    UnsupportedCodec(u64),
    #[error("unsupported hash function 0x{0:x}")]
    UnsupportedHash(u64),
    #[error("unsupported CID version {0}")]
    UnsupportedVersion(u64),
    #[error("bad multibase prefix")]
    BadPrefix,
    #[error("truncated input")]
    Truncated,
    #[error("invalid CID: {0}")]
    InvalidCid(String),

    // nodes and blocks
    #[error("bad node magic")]
    BadMagic,
    #[error("malformed node: {0}")]
    MalformedNode(String),
    #[error("block not found: {0}")]
    BlockNotFound(Cid),
    #[error("corrupt block: {0}")]
    CorruptBlock(Cid),
    #[error("invalid chunk parameters: {0}")]
    InvalidParams(String),

    // pins and concurrency
    #[error("no such pin: {0}")]
    NoSuchPin(String),
    #[error("resource busy")]
    Busy,

    // namespace
    #[error("not found: {0}")]
    NotFound(String),
    #[error("not a directory: {0}")]
    NotADirectory(String),
    #[error("already exists: {0}")]
    Exists(String),
    #[error("is a directory: {0}")]
    IsDirectory(String),
    #[error("invalid name: {0:?}")]
    InvalidName(String),
    #[error("read-only path: {0}")]
    ReadOnly(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),

    // network
    #[error("all gateways failed for {cid}: {}", format_causes(.causes))]
    AllGatewaysFailed {
        cid: String,
        causes: Vec<(String, String)>,
    },
    #[error("root mismatch: gateway returned {remote}, expected {local}")]
    RootMismatch { local: Cid, remote: String },
    #[error("unauthorized")]
    Unauthorized,
    #[error("service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("unexpected response: {0}")]
    Protocol(String),

    // datasets
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sample too large: {0}")]
    SampleTooLarge(String),
    #[error("index {index} out of range (num_samples {len})")]
    IndexOutOfRange { index: u64, len: u64 },
    #[error("no such column: {0}")]
    NoSuchColumn(String),

    // registry
    #[error("no such DID: {0}")]
    NoSuchDid(String),
    #[error("bad key: {0}")]
    BadKey(String),

    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn format_causes(causes: &[(String, String)]) -> String {
    causes
        .iter()
        .map(|(gw, cause)| format!("{gw}: {cause}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    /// True for failures of the environment (disk, network, corrupted data)
    /// rather than of the caller's request.
    pub fn is_environmental(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::BlockNotFound(_)
                | Error::CorruptBlock(_)
                | Error::AllGatewaysFailed { .. }
                | Error::ServiceUnavailable(_)
                | Error::Protocol(_)
                | Error::Busy
        )
    }

    /// Wraps the error for transport through `std::io::Read`.
    pub(crate) fn into_io(self) -> io::Error {
        match self {
            Error::Io(e) => e,
            other => io::Error::other(other),
        }
    }

    /// Recovers an engine error previously wrapped by [`Error::into_io`].
    pub fn from_io(err: io::Error) -> Error {
        if err.get_ref().is_some_and(|inner| inner.is::<Error>()) {
            let inner = err.into_inner().expect("checked above");
            *inner.downcast::<Error>().expect("checked above")
        } else {
            Error::Io(err)
        }
    }
}
