//! Signed asset documents and a local, append-only registry of them.
//!
//! An asset is named `did:cad:<root cid>`. Its document (DDO) carries
//! descriptive metadata, the root CID as checksum, the publisher's Ed25519
//! public key and a signature over the document's canonical bytes: sorted
//! keys, no whitespace, `signature` omitted.
//!
//! The registry is a JSON-lines log, one `{"ddo": .., "format_version": 1}`
//! per line. Re-publishing a DID appends a superseding record; nothing is
//! ever rewritten.

use crate::blocks::BlockSource;
use crate::cid::{base32_decode, base32_encode, Cid};
use crate::dag;
use crate::error::{Error, Result};
use crate::store::{write_atomic, BlockStore};
use chrono::{DateTime, SecondsFormat, Utc};
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub const DID_PREFIX: &str = "did:cad:";
pub const FORMAT_VERSION: u32 = 1;
const KEY_FILE_PREFIX: &str = "v1:";

pub fn did_for(root: &Cid) -> String {
    format!("{DID_PREFIX}{root}")
}

/// Parses the root CID out of a DID.
pub fn did_root(did: &str) -> Result<Cid> {
    let suffix = did
        .strip_prefix(DID_PREFIX)
        .ok_or_else(|| Error::NoSuchDid(did.to_string()))?;
    Cid::parse(suffix)
}

/// Local Ed25519 signing key.
pub struct Keypair {
    signing: SigningKey,
}

impl std::fmt::Debug for Keypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Keypair")
            .field("public", &base32_encode(&self.public_key()))
            .finish_non_exhaustive()
    }
}

impl Keypair {
    pub fn generate<R: rand::RngCore + rand::CryptoRng>(rng: &mut R) -> Self {
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        Self::from_secret(secret)
    }

    /// Fresh key from the operating system's RNG.
    pub fn random() -> Self {
        Self::generate(&mut rand::rngs::OsRng)
    }

    pub fn from_secret(secret: [u8; 32]) -> Self {
        Self {
            signing: SigningKey::from_bytes(&secret),
        }
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> [u8; 64] {
        self.signing.sign(message).to_bytes()
    }

    /// `v1:` followed by base32 of secret ‖ public.
    pub fn to_key_file(&self) -> String {
        let mut bytes = self.signing.to_bytes().to_vec();
        bytes.extend_from_slice(&self.public_key());
        format!("{KEY_FILE_PREFIX}{}\n", base32_encode(&bytes))
    }

    pub fn from_key_file(text: &str) -> Result<Self> {
        let body = text
            .trim()
            .strip_prefix(KEY_FILE_PREFIX)
            .ok_or_else(|| Error::BadKey("missing v1: prefix".into()))?;
        let bytes = base32_decode(body).ok_or_else(|| Error::BadKey("key is not base32".into()))?;
        if bytes.len() != 64 {
            return Err(Error::BadKey(format!("expected 64 key bytes, got {}", bytes.len())));
        }
        let kp = Self::from_secret(bytes[..32].try_into().unwrap());
        if kp.public_key()[..] != bytes[32..] {
            return Err(Error::BadKey("public key does not match secret".into()));
        }
        Ok(kp)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_file(&fs::read_to_string(path)?)
    }

    /// Writes the key file, refusing to overwrite an existing one.
    pub fn save(&self, path: &Path) -> Result<()> {
        if path.exists() {
            return Err(Error::Exists(path.display().to_string()));
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_atomic(path, self.to_key_file().as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetType {
    Dataset,
    Model,
    File,
}

impl std::str::FromStr for AssetType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset" => Ok(AssetType::Dataset),
            "model" => Ok(AssetType::Model),
            "file" => Ok(AssetType::File),
            other => Err(Error::Config(format!("unknown asset type {other:?}"))),
        }
    }
}

/// Caller-supplied part of a DDO.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AssetMetadata {
    pub name: String,
    pub description: String,
    pub author: String,
    pub asset_type: Option<AssetType>,
    pub license: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ddo {
    pub did: String,
    pub name: String,
    pub description: String,
    pub author: String,
    /// RFC 3339, UTC, second precision.
    pub created: String,
    pub asset_type: AssetType,
    pub checksum: Cid,
    pub license: String,
    /// Base32 Ed25519 public key.
    pub public_key: String,
    /// Base32 Ed25519 signature over [`Ddo::canonical_bytes`].
    #[serde(default)]
    pub signature: String,
}

impl Ddo {
    /// Builds and signs a document for `root`.
    pub fn signed(root: Cid, meta: &AssetMetadata, key: &Keypair, created: DateTime<Utc>) -> Self {
        let mut ddo = Ddo {
            did: did_for(&root),
            name: meta.name.clone(),
            description: meta.description.clone(),
            author: meta.author.clone(),
            created: created.to_rfc3339_opts(SecondsFormat::Secs, true),
            asset_type: meta.asset_type.unwrap_or(AssetType::File),
            checksum: root,
            license: meta.license.clone(),
            public_key: base32_encode(&key.public_key()),
            signature: String::new(),
        };
        ddo.signature = base32_encode(&key.sign(&ddo.canonical_bytes()));
        ddo
    }

    /// Sorted-key compact JSON without the signature.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut value = serde_json::to_value(self).expect("ddo serializes");
        value.as_object_mut().expect("object").remove("signature");
        serde_json::to_vec(&value).expect("value serializes")
    }

    pub fn public_key_bytes(&self) -> Result<[u8; 32]> {
        base32_decode(&self.public_key)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::BadKey("public key is not 32 base32 bytes".into()))
    }

    pub fn verify_signature(&self) -> bool {
        verify_bytes(&self.canonical_bytes(), &self.signature, &self.public_key)
    }

    pub fn created_at(&self) -> Result<DateTime<Utc>> {
        DateTime::parse_from_rfc3339(&self.created)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| Error::Config(format!("bad created timestamp: {e}")))
    }
}

/// Checks an Ed25519 signature given in base32 over `message`.
pub fn verify_bytes(message: &[u8], signature_b32: &str, public_key_b32: &str) -> bool {
    let Some(key) = base32_decode(public_key_b32)
        .and_then(|b| <[u8; 32]>::try_from(b).ok())
        .and_then(|b| VerifyingKey::from_bytes(&b).ok())
    else {
        return false;
    };
    let Some(sig) = base32_decode(signature_b32)
        .and_then(|b| <[u8; 64]>::try_from(b).ok())
        .map(|b| Signature::from_bytes(&b))
    else {
        return false;
    };
    key.verify_strict(message, &sig).is_ok()
}

#[derive(Debug, Serialize, Deserialize)]
struct LogRecord {
    ddo: Ddo,
    format_version: u32,
}

#[derive(Debug, Clone, Default)]
pub struct ListFilter {
    pub asset_type: Option<AssetType>,
    /// Case-sensitive substring of the author field.
    pub author: Option<String>,
}

/// Append-only JSON-lines registry.
#[derive(Debug)]
pub struct Registry {
    path: PathBuf,
    append: Mutex<()>,
}

impl Registry {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(Self {
            path,
            append: Mutex::new(()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every record in log order.
    pub fn records(&self) -> Result<Vec<Ddo>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, line)| {
                let rec: LogRecord = serde_json::from_str(line)?;
                if rec.format_version != FORMAT_VERSION {
                    return Err(Error::Config(format!(
                        "registry line {}: unsupported format_version {}",
                        n + 1,
                        rec.format_version
                    )));
                }
                Ok(rec.ddo)
            })
            .collect()
    }

    fn append(&self, ddo: &Ddo) -> Result<()> {
        let _guard = self.append.lock().unwrap_or_else(|e| e.into_inner());
        let mut line = serde_json::to_vec(&LogRecord {
            ddo: ddo.clone(),
            format_version: FORMAT_VERSION,
        })?;
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }

    /// Signs and records `root`, pinning it under its DID. A DID already
    /// published under another key cannot be superseded.
    pub fn publish(&self, root: Cid, meta: &AssetMetadata, key: &Keypair, store: &BlockStore) -> Result<Ddo> {
        self.publish_at(root, meta, key, store, Utc::now())
    }

    pub fn publish_at(
        &self,
        root: Cid,
        meta: &AssetMetadata,
        key: &Keypair,
        store: &BlockStore,
        created: DateTime<Utc>,
    ) -> Result<Ddo> {
        let ddo = Ddo::signed(root, meta, key, created);
        match self.resolve(&ddo.did) {
            Ok(prev) if prev.public_key != ddo.public_key => {
                return Err(Error::BadKey(format!("{} was published under a different key", ddo.did)))
            }
            Ok(_) | Err(Error::NoSuchDid(_)) => {}
            Err(e) => return Err(e),
        }
        store.pin(&ddo.did, &root)?;
        self.append(&ddo)?;
        Ok(ddo)
    }

    /// Latest record for `did`.
    pub fn resolve(&self, did: &str) -> Result<Ddo> {
        self.records()?
            .into_iter()
            .rev()
            .find(|d| d.did == did)
            .ok_or_else(|| Error::NoSuchDid(did.to_string()))
    }

    /// Latest record per DID, in order of first publication.
    pub fn list(&self, filter: &ListFilter) -> Result<Vec<Ddo>> {
        let records = self.records()?;
        let mut seen = HashSet::new();
        let mut order = Vec::new();
        for d in &records {
            if seen.insert(d.did.clone()) {
                order.push(d.did.clone());
            }
        }
        Ok(order
            .into_iter()
            .filter_map(|did| records.iter().rev().find(|d| d.did == did).cloned())
            .filter(|d| filter.asset_type.is_none_or(|t| d.asset_type == t))
            .filter(|d| filter.author.as_ref().is_none_or(|a| d.author.contains(a.as_str())))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub did: String,
    pub signature_ok: bool,
    pub checksum_ok: bool,
    /// Why `checksum_ok` is false, when it is.
    pub cause: Option<String>,
}

/// Re-fetches every block under the asset's checksum and rehashes it, and
/// checks the document's signature. Fetch failures are reported in the
/// verdict, not returned as errors.
pub fn verify_asset<S: BlockSource + ?Sized>(did: &str, registry: &Registry, source: &S) -> Result<VerifyReport> {
    let ddo = registry.resolve(did)?;
    Ok(verify_ddo(&ddo, source))
}

pub fn verify_ddo<S: BlockSource + ?Sized>(ddo: &Ddo, source: &S) -> VerifyReport {
    let cause = if ddo.did != did_for(&ddo.checksum) {
        Some(format!("DID suffix does not match checksum {}", ddo.checksum))
    } else {
        verify_tree(&ddo.checksum, source).err().map(|e| e.to_string())
    };
    VerifyReport {
        did: ddo.did.clone(),
        signature_ok: ddo.verify_signature(),
        checksum_ok: cause.is_none(),
        cause,
    }
}

fn verify_tree<S: BlockSource + ?Sized>(root: &Cid, source: &S) -> Result<()> {
    let mut seen = HashSet::new();
    let mut stack = vec![*root];
    while let Some(cid) = stack.pop() {
        if !seen.insert(cid) {
            continue;
        }
        let bytes = source.get_block(&cid)?;
        if Cid::of_block(&bytes, cid.codec())? != cid {
            return Err(Error::CorruptBlock(cid));
        }
        stack.extend(dag::child_links(&cid, &bytes)?.into_iter().map(|l| l.cid));
    }
    Ok(())
}
