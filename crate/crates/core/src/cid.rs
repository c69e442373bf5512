//! Content identifiers.
//!
//! A [`Cid`] names a block by the SHA-256 digest of its bytes plus a codec
//! tag describing how to interpret them.
//!
//! ## Binary form
//!
//! `varint(1) ‖ varint(codec) ‖ varint(0x12) ‖ varint(32) ‖ digest`
//!
//! ## String form
//!
//! Multibase base32-lower: the character `b` followed by the unpadded,
//! lowercase RFC 4648 base32 encoding of the binary form. No other bases are
//! accepted, so every CID has exactly one text rendering.

use crate::error::{Error, Result};
use data_encoding::{Encoding, Specification};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

/// Raw leaf block.
pub const RAW: u64 = 0x55;
/// Interior DAG node in the CDN1 format (private-use multicodec range).
pub const DAG_NODE: u64 = 0x300000;
/// Multihash code for SHA-256.
pub const SHA2_256: u64 = 0x12;
pub const DIGEST_LEN: usize = 32;

const VERSION: u64 = 1;
const MULTIBASE_BASE32_LOWER: char = 'b';

fn base32_lower() -> &'static Encoding {
    static ENCODING: OnceLock<Encoding> = OnceLock::new();
    ENCODING.get_or_init(|| {
        let mut spec = Specification::new();
        spec.symbols.push_str("abcdefghijklmnopqrstuvwxyz234567");
        spec.encoding().expect("valid base32 specification")
    })
}

/// Lowercase unpadded RFC 4648 base32, shared by the text forms of keys and
/// signatures.
pub fn base32_encode(bytes: &[u8]) -> String {
    base32_lower().encode(bytes)
}

pub fn base32_decode(text: &str) -> Option<Vec<u8>> {
    base32_lower().decode(text.as_bytes()).ok()
}

/// CIDv1 with a SHA-256 multihash.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cid {
    codec: u64,
    digest: [u8; DIGEST_LEN],
}

fn check_codec(codec: u64) -> Result<()> {
    match codec {
        RAW | DAG_NODE => Ok(()),
        other => Err(Error::UnsupportedCodec(other)),
    }
}

impl Cid {
    /// Hashes `bytes` and tags the digest with `codec`.
    pub fn of_block(bytes: &[u8], codec: u64) -> Result<Cid> {
        check_codec(codec)?;
        Ok(Cid {
            codec,
            digest: Sha256::digest(bytes).into(),
        })
    }

    pub fn raw(bytes: &[u8]) -> Cid {
        Cid::of_block(bytes, RAW).expect("raw codec is supported")
    }

    pub fn node(bytes: &[u8]) -> Cid {
        Cid::of_block(bytes, DAG_NODE).expect("node codec is supported")
    }

    pub fn from_digest(codec: u64, digest: [u8; DIGEST_LEN]) -> Result<Cid> {
        check_codec(codec)?;
        Ok(Cid { codec, digest })
    }

    pub fn version(&self) -> u64 {
        VERSION
    }

    pub fn codec(&self) -> u64 {
        self.codec
    }

    pub fn hash_code(&self) -> u64 {
        SHA2_256
    }

    pub fn digest(&self) -> &[u8; DIGEST_LEN] {
        &self.digest
    }

    pub fn is_raw(&self) -> bool {
        self.codec == RAW
    }

    /// True iff `bytes` hash to this CID under its own codec.
    pub fn verify(&self, bytes: &[u8]) -> bool {
        let digest: [u8; DIGEST_LEN] = Sha256::digest(bytes).into();
        digest == self.digest
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = unsigned_varint::encode::u64_buffer();
        let mut out = Vec::with_capacity(40);
        out.extend_from_slice(unsigned_varint::encode::u64(VERSION, &mut buf));
        out.extend_from_slice(unsigned_varint::encode::u64(self.codec, &mut buf));
        out.extend_from_slice(unsigned_varint::encode::u64(SHA2_256, &mut buf));
        out.extend_from_slice(unsigned_varint::encode::u64(DIGEST_LEN as u64, &mut buf));
        out.extend_from_slice(&self.digest);
        out
    }

    /// Decodes the binary form; the input must contain exactly one CID.
    pub fn from_bytes(bytes: &[u8]) -> Result<Cid> {
        let (version, rest) = read_varint(bytes)?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (codec, rest) = read_varint(rest)?;
        let (hash_code, rest) = read_varint(rest)?;
        let (len, rest) = read_varint(rest)?;
        check_codec(codec)?;
        if hash_code != SHA2_256 {
            return Err(Error::UnsupportedHash(hash_code));
        }
        if len != DIGEST_LEN as u64 {
            return Err(Error::InvalidCid(format!("digest length {len}, expected 32")));
        }
        if rest.len() < DIGEST_LEN {
            return Err(Error::Truncated);
        }
        if rest.len() > DIGEST_LEN {
            return Err(Error::InvalidCid("trailing bytes after digest".into()));
        }
        let mut digest = [0u8; DIGEST_LEN];
        digest.copy_from_slice(rest);
        Ok(Cid { codec, digest })
    }

    /// Renders the multibase text form.
    pub fn render(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Cid> {
        let mut chars = text.chars();
        match chars.next() {
            Some(MULTIBASE_BASE32_LOWER) => {}
            _ => return Err(Error::BadPrefix),
        }
        let payload = chars.as_str();
        if payload.is_empty() {
            return Err(Error::Truncated);
        }
        let bytes = base32_decode(payload)
            .ok_or_else(|| Error::InvalidCid(format!("not base32-lower: {payload:?}")))?;
        Cid::from_bytes(&bytes)
    }
}

fn read_varint(bytes: &[u8]) -> Result<(u64, &[u8])> {
    use unsigned_varint::decode::Error as VarintError;
    unsigned_varint::decode::u64(bytes).map_err(|e| match e {
        VarintError::Insufficient => Error::Truncated,
        other => Error::InvalidCid(format!("bad varint: {other}")),
    })
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{MULTIBASE_BASE32_LOWER}{}",
            base32_lower().encode(&self.to_bytes())
        )
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({self})")
    }
}

impl FromStr for Cid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Cid> {
        Cid::parse(s)
    }
}

impl serde::Serialize for Cid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> serde::Deserialize<'de> for Cid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Cid, D::Error> {
        let text = String::deserialize(d)?;
        Cid::parse(&text).map_err(serde::de::Error::custom)
    }
}
