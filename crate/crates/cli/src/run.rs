use crate::args::*;
use cadfs_core::blocks::BlockSink;
use cadfs_core::dag::{self, ChunkParams, DagNode, EntryKind, Link};
use cadfs_core::dataset::{
    build_dataset, ColumnData, DatasetReader, DatasetSpec, Shape, DEFAULT_CACHE_CHUNKS,
};
use cadfs_core::mfs::Entry;
use cadfs_core::net::{self, GatewayClient, NetConfig, PinFilter, PinningClient, RemotePinRecord, ServeOptions};
use cadfs_core::registry::{self, AssetMetadata, Keypair, ListFilter, Registry};
use cadfs_core::store::BlockStore;
use cadfs_core::vfs::{Vfs, VfsPath};
use cadfs_core::{Cid, Error, Result};
use serde_json::{json, Value};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

pub const REGISTRY_FILE: &str = "registry.jsonl";

pub struct Context {
    root: PathBuf,
    config: NetConfig,
    json: bool,
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self> {
        let root = match &cli.store {
            Some(p) => p.clone(),
            None => std::env::var_os("HOME")
                .map(|h| PathBuf::from(h).join(".cadfs"))
                .ok_or_else(|| Error::Config("no --store given and HOME is not set".into()))?,
        };
        let config = match &cli.config {
            Some(p) => NetConfig::load(p)?,
            None => NetConfig::default(),
        };
        Ok(Self {
            root,
            config,
            json: cli.json,
        })
    }

    fn gateways(&self) -> Result<Option<GatewayClient>> {
        if self.config.gateways.is_empty() {
            return Ok(None);
        }
        GatewayClient::from_config(&self.config).map(Some)
    }

    fn vfs(&self) -> Result<Vfs<Arc<BlockStore>>> {
        Vfs::open(&self.root, self.gateways()?)
    }

    fn registry(&self) -> Result<Registry> {
        Registry::open(self.root.join(REGISTRY_FILE))
    }

    fn pinning(&self, service: &str) -> Result<PinningClient> {
        let svc = self.config.pinning_service(service)?;
        PinningClient::new(
            svc.url.clone(),
            svc.token()?,
            Duration::from_secs_f64(self.config.request_timeout_s),
            self.config.max_retries_per_gateway,
        )
    }

    /// Prints `doc` in JSON mode, otherwise the tab-separated `rows`.
    fn emit(&self, doc: Value, rows: Vec<Vec<String>>) -> Result<()> {
        let mut out = io::stdout().lock();
        if self.json {
            serde_json::to_writer(&mut out, &doc)?;
            writeln!(out)?;
        } else {
            for row in rows {
                writeln!(out, "{}", row.join("\t"))?;
            }
        }
        out.flush()?;
        Ok(())
    }

    fn emit_root(&self, root: Cid) -> Result<()> {
        self.emit(json!({ "root": root }), vec![vec![root.render()]])
    }
}

fn params(c: ChunkArgs, defaults: ChunkParams) -> Result<ChunkParams> {
    ChunkParams::new(
        c.chunk_size.unwrap_or(defaults.chunk_size()),
        c.fanout.unwrap_or(defaults.fanout()),
    )
}

/// Accepts `mfs://` and `cad://` URLs, bare CIDs, `did:cad:` names and
/// absolute namespace paths.
fn parse_ref(s: &str) -> Result<VfsPath> {
    if s.contains("://") {
        return VfsPath::parse(s);
    }
    if s.starts_with(registry::DID_PREFIX) {
        return Ok(VfsPath::Cad {
            cid: registry::did_root(s)?,
            path: vec![],
        });
    }
    if s.starts_with('/') {
        return VfsPath::parse(&format!("mfs://{s}"));
    }
    Ok(VfsPath::Cad {
        cid: Cid::parse(s)?,
        path: vec![],
    })
}

/// Namespace path: `mfs://x` or a plain path.
fn mfs_path(s: &str) -> Result<VfsPath> {
    if s.contains("://") {
        VfsPath::parse(s)
    } else {
        VfsPath::parse(&format!("mfs://{s}"))
    }
}

fn entry_json(e: &Entry) -> Value {
    json!({ "name": e.name, "cid": e.cid, "size": e.size, "kind": e.kind })
}

fn entry_row(e: &Entry) -> Vec<String> {
    vec![e.name.clone(), e.cid.render(), e.size.to_string(), e.kind.to_string()]
}

fn record_row(r: &RemotePinRecord) -> Vec<String> {
    vec![
        r.request_id.clone(),
        r.status.as_str().to_string(),
        r.pin.cid.render(),
        r.pin.name.clone(),
    ]
}

fn write_stdout(bytes: &[u8]) -> Result<()> {
    let mut out = io::stdout().lock();
    out.write_all(bytes)?;
    out.flush()?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Context::new(&cli)?;
    match cli.command {
        Command::Add { path, chunking, no_pin } => add(&ctx, &path, chunking, no_pin),
        Command::Get { target, output } => get(&ctx, &target, &output),
        Command::Cat { target } => write_stdout(&ctx.vfs()?.cat(&parse_ref(&target)?)?),
        Command::Ls { target } => {
            let entries = ctx.vfs()?.ls(&parse_ref(&target)?)?;
            ctx.emit(
                json!({ "entries": entries.iter().map(entry_json).collect::<Vec<_>>() }),
                entries.iter().map(entry_row).collect(),
            )
        }
        Command::Pin(cmd) => pin(&ctx, cmd),
        Command::Gc => {
            let r = BlockStore::open(&ctx.root)?.gc()?;
            ctx.emit(
                serde_json::to_value(r)?,
                vec![vec![r.deleted.to_string(), r.retained.to_string(), r.bytes_freed.to_string()]],
            )
        }
        Command::Mfs(cmd) => mfs(&ctx, cmd),
        Command::Serve { bind, chunking } => {
            let store = Arc::new(BlockStore::open(&ctx.root)?);
            let options = ServeOptions {
                default_params: params(chunking, ChunkParams::default())?,
                ..ServeOptions::default()
            };
            let server = net::serve(store, &bind, options)?;
            ctx.emit(json!({ "url": server.url() }), vec![vec![server.url()]])?;
            server.join();
            Ok(())
        }
        Command::RemotePin(cmd) => remote_pin(&ctx, cmd),
        Command::Publish {
            cid,
            name,
            author,
            asset_type,
            license,
            description,
            key,
            created,
        } => {
            let root = parse_cid(&cid)?;
            let key_path = key.unwrap_or_else(|| ctx.root.join("keys").join("owner.key"));
            let key = if key_path.exists() {
                Keypair::load(&key_path)?
            } else {
                let k = Keypair::random();
                k.save(&key_path)?;
                k
            };
            let meta = AssetMetadata {
                name,
                description,
                author,
                asset_type: Some(asset_type.parse()?),
                license,
            };
            let created = match created {
                Some(t) => chrono_parse(&t)?,
                None => chrono::Utc::now(),
            };
            let store = BlockStore::open(&ctx.root)?;
            let ddo = ctx.registry()?.publish_at(root, &meta, &key, &store, created)?;
            ctx.emit(serde_json::to_value(&ddo)?, vec![vec![ddo.did.clone()]])
        }
        Command::Resolve { did } => {
            let ddo = ctx.registry()?.resolve(&did)?;
            let rows = vec![
                vec!["did".into(), ddo.did.clone()],
                vec!["name".into(), ddo.name.clone()],
                vec!["author".into(), ddo.author.clone()],
                vec!["type".into(), serde_json::to_value(ddo.asset_type)?.as_str().unwrap_or("").into()],
                vec!["checksum".into(), ddo.checksum.render()],
                vec!["license".into(), ddo.license.clone()],
                vec!["created".into(), ddo.created.clone()],
                vec!["public_key".into(), ddo.public_key.clone()],
            ];
            ctx.emit(serde_json::to_value(&ddo)?, rows)
        }
        Command::Assets { asset_type, author } => {
            let filter = ListFilter {
                asset_type: asset_type.map(|t| t.parse()).transpose()?,
                author,
            };
            let ddos = ctx.registry()?.list(&filter)?;
            ctx.emit(
                json!({ "assets": ddos }),
                ddos.iter().map(|d| vec![d.did.clone(), d.name.clone(), d.author.clone()]).collect(),
            )
        }
        Command::Verify { did } => {
            let vfs = ctx.vfs()?;
            let report = registry::verify_asset(&did, &ctx.registry()?, &vfs.resolver())?;
            let mut row = vec![
                report.did.clone(),
                format!("signature_ok={}", report.signature_ok),
                format!("checksum_ok={}", report.checksum_ok),
            ];
            row.extend(report.cause.clone());
            ctx.emit(serde_json::to_value(&report)?, vec![row])
        }
        Command::Dataset(cmd) => dataset(&ctx, cmd),
    }
}

fn chrono_parse(t: &str) -> Result<chrono::DateTime<chrono::Utc>> {
    chrono::DateTime::parse_from_rfc3339(t)
        .map(|t| t.with_timezone(&chrono::Utc))
        .map_err(|e| Error::Config(format!("bad timestamp {t:?}: {e}")))
}

fn parse_cid(s: &str) -> Result<Cid> {
    match parse_ref(s)? {
        VfsPath::Cad { cid, path } if path.is_empty() => Ok(cid),
        other => Err(Error::InvalidPath(format!("{other}: expected a CID"))),
    }
}

fn add(ctx: &Context, path: &Path, chunking: ChunkArgs, no_pin: bool) -> Result<()> {
    let params = params(chunking, ChunkParams::default())?;
    let store = BlockStore::open(&ctx.root)?;
    let (root, size) = if path == Path::new("-") {
        let mut data = Vec::new();
        io::stdin().lock().read_to_end(&mut data)?;
        (dag::build_file_dag_bytes(&data, params, &store)?, data.len() as u64)
    } else {
        import(&store, path, params)?
    };
    if !no_pin {
        store.pin(&root.render(), &root)?;
    }
    ctx.emit(json!({ "cid": root, "size": size }), vec![vec![root.render()]])
}

/// Imports a file or a directory tree; returns its root and total size.
fn import(store: &BlockStore, path: &Path, params: ChunkParams) -> Result<(Cid, u64)> {
    let meta = std::fs::metadata(path)?;
    if meta.is_file() {
        let file = std::fs::File::open(path)?;
        let root = dag::build_file_dag(io::BufReader::new(file), params, store)?;
        return Ok((root, meta.len()));
    }
    let mut links = Vec::new();
    for entry in std::fs::read_dir(path)? {
        let entry = entry?;
        let name = entry
            .file_name()
            .into_string()
            .map_err(|n| Error::InvalidName(n.to_string_lossy().into_owned()))?;
        let (cid, size) = import(store, &entry.path(), params)?;
        links.push(Link::named(name, cid, size));
    }
    let node = DagNode::directory(links)?;
    let (cid, bytes) = node.to_block();
    store.put_block(&cid, &bytes)?;
    Ok((cid, node.total_size()))
}

fn get(ctx: &Context, target: &str, output: &Path) -> Result<()> {
    let vfs = ctx.vfs()?;
    let src = parse_ref(target)?;
    let stat = vfs.info(&src)?;
    let bytes = export(&vfs, &src, output)?;
    ctx.emit(
        json!({ "cid": stat.cid, "path": output, "bytes": bytes }),
        vec![vec![stat.cid.render(), output.display().to_string()]],
    )
}

fn export(vfs: &Vfs<Arc<BlockStore>>, src: &VfsPath, dst: &Path) -> Result<u64> {
    if vfs.info(src)?.kind == EntryKind::File {
        let mut reader = vfs.open_read(src)?;
        let mut file = io::BufWriter::new(std::fs::File::create(dst)?);
        let n = io::copy(&mut reader, &mut file).map_err(Error::from_io)?;
        file.flush()?;
        return Ok(n);
    }
    std::fs::create_dir_all(dst)?;
    let mut total = 0;
    for e in vfs.ls(src)? {
        let child = VfsPath::Cad { cid: e.cid, path: vec![] };
        total += export(vfs, &child, &dst.join(&e.name))?;
    }
    Ok(total)
}

fn pin(ctx: &Context, cmd: PinCommand) -> Result<()> {
    let store = BlockStore::open(&ctx.root)?;
    match cmd {
        PinCommand::Add { cid, name } => {
            let cid = parse_cid(&cid)?;
            let name = name.unwrap_or_else(|| cid.render());
            store.pin(&name, &cid)?;
            ctx.emit(json!({ "name": name, "cid": cid }), vec![vec![name.clone(), cid.render()]])
        }
        PinCommand::Rm { name } => {
            let cid = store.unpin(&name)?;
            ctx.emit(json!({ "name": name, "cid": cid }), vec![vec![name.clone(), cid.render()]])
        }
        PinCommand::Ls => {
            let pins = store.list_pins()?;
            ctx.emit(
                json!({ "pins": pins }),
                pins.iter().map(|(n, c)| vec![n.clone(), c.render()]).collect(),
            )
        }
    }
}

fn mfs(ctx: &Context, cmd: MfsCommand) -> Result<()> {
    let vfs = ctx.vfs()?;
    match cmd {
        MfsCommand::Mkdir { path, parents } => ctx.emit_root(vfs.mkdir(&mfs_path(&path)?, parents)?),
        MfsCommand::Write { path, source } => {
            let target = mfs_path(&path)?;
            let VfsPath::Mfs(p) = &target else {
                return Err(Error::ReadOnly(target.to_string()));
            };
            let root = match source {
                Some(file) => vfs.mfs().write_from(p, io::BufReader::new(std::fs::File::open(file)?))?,
                None => vfs.mfs().write_from(p, io::stdin().lock())?,
            };
            ctx.emit_root(root)
        }
        MfsCommand::Read { path } => write_stdout(&vfs.cat(&mfs_path(&path)?)?),
        MfsCommand::Cp { src, dst } => {
            let src = if src.starts_with('/') { mfs_path(&src)? } else { parse_ref(&src)? };
            ctx.emit_root(vfs.cp(&src, &mfs_path(&dst)?)?)
        }
        MfsCommand::Mv { src, dst } => ctx.emit_root(vfs.mv(&mfs_path(&src)?, &mfs_path(&dst)?)?),
        MfsCommand::Rm { path } => ctx.emit_root(vfs.rm(&mfs_path(&path)?)?),
        MfsCommand::Ls { path } => {
            let entries = vfs.ls(&mfs_path(&path)?)?;
            ctx.emit(
                json!({ "entries": entries.iter().map(entry_json).collect::<Vec<_>>() }),
                entries.iter().map(entry_row).collect(),
            )
        }
        MfsCommand::Stat { path } => {
            let s = vfs.info(&mfs_path(&path)?)?;
            ctx.emit(
                json!({ "cid": s.cid, "size": s.size, "kind": s.kind }),
                vec![vec![s.cid.render(), s.size.to_string(), s.kind.to_string()]],
            )
        }
    }
}

fn remote_pin(ctx: &Context, cmd: RemotePinCommand) -> Result<()> {
    match cmd {
        RemotePinCommand::Add { cid, service, name } => {
            let cid = parse_cid(&cid)?;
            let name = name.unwrap_or_else(|| cid.render());
            let rec = ctx.pinning(&service)?.pin(&cid, &name)?;
            ctx.emit(serde_json::to_value(&rec)?, vec![record_row(&rec)])
        }
        RemotePinCommand::Status { request_id, service } => {
            let rec = ctx.pinning(&service)?.status(&request_id)?;
            ctx.emit(serde_json::to_value(&rec)?, vec![record_row(&rec)])
        }
        RemotePinCommand::Rm { request_id, service } => {
            ctx.pinning(&service)?.unpin(&request_id)?;
            ctx.emit(json!({ "removed": request_id }), vec![vec![request_id.clone()]])
        }
        RemotePinCommand::Ls {
            service,
            cid,
            name,
            status,
        } => {
            let filter = PinFilter {
                cid: cid.as_deref().map(parse_cid).transpose()?,
                name,
                status: status.as_deref().map(str::parse).transpose()?,
            };
            let records = ctx.pinning(&service)?.list(&filter)?;
            ctx.emit(json!({ "results": records }), records.iter().map(record_row).collect())
        }
    }
}

fn dataset(ctx: &Context, cmd: DatasetCommand) -> Result<()> {
    match cmd {
        DatasetCommand::Create { manifest, data, no_pin } => {
            let spec: DatasetSpec = serde_json::from_slice(&std::fs::read(&manifest)?)
                .map_err(|e| Error::Config(format!("{}: {e}", manifest.display())))?;
            let mut fixed: Vec<Vec<u8>> = Vec::new();
            let mut variable: Vec<Vec<Vec<u8>>> = Vec::new();
            for col in &spec.columns {
                match col.shape {
                    Shape::Fixed(_) => fixed.push(std::fs::read(data.join(format!("{}.bin", col.name)))?),
                    Shape::Variable => {
                        let dir = data.join(&col.name);
                        let mut files: Vec<PathBuf> =
                            std::fs::read_dir(&dir)?.map(|e| e.map(|e| e.path())).collect::<io::Result<_>>()?;
                        files.sort();
                        variable.push(files.iter().map(std::fs::read).collect::<io::Result<_>>()?);
                    }
                }
            }
            let refs: Vec<Vec<&[u8]>> = variable.iter().map(|v| v.iter().map(Vec::as_slice).collect()).collect();
            let (mut fi, mut vi) = (0, 0);
            let columns: Vec<ColumnData<'_>> = spec
                .columns
                .iter()
                .map(|c| match c.shape {
                    Shape::Fixed(_) => {
                        fi += 1;
                        ColumnData::Fixed(&fixed[fi - 1])
                    }
                    Shape::Variable => {
                        vi += 1;
                        ColumnData::Variable(&refs[vi - 1])
                    }
                })
                .collect();
            let store = BlockStore::open(&ctx.root)?;
            let (root, m) = build_dataset(&spec, &columns, &store)?;
            if !no_pin {
                store.pin(&root.render(), &root)?;
            }
            let chunks: serde_json::Map<String, Value> =
                m.chunk_cids.iter().map(|(k, v)| (k.clone(), json!(v.len()))).collect();
            ctx.emit(
                json!({ "cid": root, "name": m.name, "num_samples": m.num_samples, "chunks": chunks }),
                vec![vec![root.render()]],
            )
        }
        DatasetCommand::GetSample { dataset, column, index } => {
            let root = if dataset.starts_with(registry::DID_PREFIX) {
                ctx.registry()?.resolve(&dataset)?.checksum
            } else {
                parse_cid(&dataset)?
            };
            let vfs = ctx.vfs()?;
            let reader = DatasetReader::open(root, vfs.resolver(), DEFAULT_CACHE_CHUNKS)?;
            let sample = reader.get_sample(&column, index)?;
            if ctx.json {
                let hex: String = sample.data.iter().map(|b| format!("{b:02x}")).collect();
                ctx.emit(
                    json!({
                        "column": column,
                        "index": index,
                        "dtype": sample.dtype,
                        "shape": sample.shape,
                        "nbytes": sample.data.len(),
                        "hex": hex,
                    }),
                    vec![],
                )
            } else {
                write_stdout(&sample.data)
            }
        }
    }
}
