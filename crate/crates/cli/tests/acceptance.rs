//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Run with `cargo test -p cadfs-cli --test acceptance`.

#[allow(dead_code)]
#[path = "../../core/tests/support/gc_oracle.rs"]
mod gc_oracle;
#[allow(dead_code)]
#[path = "../../core/tests/support/mfs_model.rs"]
mod mfs_model;

use cadfs_core::blocks::{BlockSource, CountingSource, MemoryStore};
use cadfs_core::dag::{
    build_file_dag_bytes, chunk_stream, compute_root, reassemble, ChunkParams, DagNode, DATASET_CHUNK_SIZE,
};
use cadfs_core::dataset::{build_dataset, ColumnData, ColumnSpec, DatasetReader, DatasetSpec, Dtype, Order};
use cadfs_core::net::mock::{Behavior, MockGateway};
use cadfs_core::net::{GatewayClient, PushOptions};
use cadfs_core::registry::{verify_asset, AssetMetadata, AssetType, Keypair, Registry};
use cadfs_core::store::BlockStore;
use cadfs_core::Cid;
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_cadfs");
const MIB: usize = 1 << 20;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_bytes(rng: &mut StdRng, n: usize) -> Vec<u8> {
    let mut v = vec![0; n];
    rng.fill_bytes(&mut v);
    v
}

/// Greedy placement: a new chunk opens whenever the next item would overflow
/// the current one.
fn packing_oracle(lens: &[u64], chunk_size: u64) -> Vec<u64> {
    let mut fills: Vec<u64> = vec![];
    for &len in lens {
        match fills.last_mut() {
            Some(f) if *f + len <= chunk_size => *f += len,
            _ => fills.push(len),
        }
    }
    fills
}

fn chunk_size_default() -> Outcome {
    let start = Instant::now();
    let spec = DatasetSpec::new("d", vec![ColumnSpec::fixed("x", Dtype::U8, vec![MIB as u64])]);
    ensure(spec.chunk_size == 16 * MIB as u64, || format!("default chunk_size {}", spec.chunk_size))?;
    ensure(ChunkParams::dataset().chunk_size() == DATASET_CHUNK_SIZE, || "dataset params".into())?;

    let data = random_bytes(&mut StdRng::seed_from_u64(40), 40 * MIB);
    let expected = vec![16 * MIB as u64, 16 * MIB as u64, 8 * MIB as u64];

    let chunks = chunk_stream(&data[..], ChunkParams::dataset()).map_err(|e| e.to_string())?;
    let sizes: Vec<u64> = chunks.iter().map(|c| c.len() as u64).collect();
    let byte_oracle = packing_oracle(&vec![1024; data.len() / 1024], spec.chunk_size);
    ensure(sizes == expected && byte_oracle == expected, || format!("stream chunks {sizes:?}"))?;

    // the same 40 MiB as 40 one-MiB samples of a dataset column
    let store = MemoryStore::new();
    let (_, manifest) = build_dataset(&spec, &[ColumnData::Fixed(&data)], &store).map_err(|e| e.to_string())?;
    let col: Vec<u64> = manifest.chunk_cids["x"]
        .iter()
        .map(|c| store.get_block(c).map(|b| b.len() as u64))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let sample_oracle = packing_oracle(&[MIB as u64; 40], spec.chunk_size);
    ensure(col == expected && sample_oracle == expected, || format!("column chunks {col:?}"))?;

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("[16, 16, 8] MiB, {:.1}s", elapsed.as_secs_f64()))
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn_server(store: &Path) -> Result<(Server, String), String> {
    let mut child = Command::new(BIN)
        .args(["--store"])
        .arg(store)
        .args(["serve", "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| e.to_string())?;
    let stdout = child.stdout.take().unwrap();
    let server = Server(child);
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).map_err(|e| e.to_string())?;
    let url = line.trim().to_string();
    ensure(url.starts_with("http://"), || format!("server printed {url:?}"))?;
    Ok((server, url))
}

fn round_trip_sizes(rng: &mut StdRng) -> Vec<usize> {
    let c = MIB;
    let span = 32 * MIB;
    let mut sizes = vec![
        0,
        1,
        2,
        c - 1,
        c,
        c + 1,
        2 * c,
        7 * c / 2,
        span - 1,
        span,
        span + 1,
        span + c,
        64 * MIB - 1,
        64 * MIB,
    ];
    while sizes.len() < 200 {
        // log-uniform over [1 B, 64 MiB]
        let exp: f64 = rng.gen_range(0.0..26.0);
        sizes.push((2f64.powf(exp) as usize).min(64 * MIB));
    }
    sizes
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_server, url) = spawn_server(&dir.path().join("a"))?;
    let client = GatewayClient::new(vec![url], Duration::from_secs(60), 2).map_err(|e| e.to_string())?;

    let mut rng = StdRng::seed_from_u64(200);
    let sizes = round_trip_sizes(&mut rng);
    let mut total = 0usize;
    for (i, &n) in sizes.iter().enumerate() {
        let data = random_bytes(&mut rng, n);
        total += n;
        let params = ChunkParams::default();

        let local = MemoryStore::new();
        let root = build_file_dag_bytes(&data, params, &local).map_err(|e| e.to_string())?;
        let back = reassemble(root, &local).map_err(|e| e.to_string())?;
        ensure(back == data, || format!("file {i} ({n} B): local round trip differs"))?;

        let pushed = client.push_file(&data, PushOptions::default()).map_err(|e| format!("file {i}: {e}"))?;
        ensure(pushed == root, || format!("file {i}: server root {pushed}, local {root}"))?;
        let remote = client.fetch_file_bytes(root).map_err(|e| format!("file {i}: {e}"))?;
        ensure(remote == data, || format!("file {i} ({n} B): remote round trip differs"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "200/200 byte-exact local and over loopback, {} MiB, {:.0}s",
        total / MIB,
        elapsed.as_secs_f64()
    ))
}

fn pattern(n: usize, seed: usize) -> Vec<u8> {
    (0..n).map(|i| ((i * 31 + seed) % 251) as u8).collect()
}

/// Roots computed by an independent encoder (`core/tests/oracle`).
const FROZEN: &[(usize, usize, usize, usize, &str)] = &[
    (0, 0, MIB, 32, "bafkreihdwdcefgh4dqkjv67uzcmw7ojee6xedzdetojuzjevtenxquvyku"),
    (10, 7, 4, 2, "bagaibqabciqhawsdymvdt6h5qs7v7i6cbr6caiqsvna44cnqwkenamvvpzndwly"),
    (1000, 3, 7, 3, "bagaibqabciqgxhkdvdtsfj6jjxhnwyrejqthz7jdwoy5ofj3vipsxwhf7q5md3y"),
    (3_500_000, 1, MIB, 32, "bagaibqabciqkpl6ykpbjoky4ait4iiw2gs5svcmt5ikpi626dgiczsrn5sg2ddq"),
    (40 * MIB, 5, 16 * MIB, 32, "bagaibqabciqfmay5ttc2ntt5q5bx53dbh2buweviph4q3d4bcb5ngjlkcq2khmi"),
    (40 * MIB, 5, 16 * MIB, 2, "bagaibqabciqboj4vcgnzj6e5pzr2ehwvvzl7qflrq6f4scff4jrjzibbe5mtktq"),
];

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = vec![];
    for (i, &(n, seed, chunk, fanout, want)) in FROZEN.iter().enumerate() {
        let p = dir.path().join(format!("f{i}"));
        std::fs::write(&p, pattern(n, seed)).map_err(|e| e.to_string())?;
        files.push((p, chunk, fanout, want));
    }
    let mut runs: Vec<Vec<String>> = vec![];
    for run in 0..2 {
        let store = dir.path().join(format!("store{run}"));
        let mut roots = vec![];
        for (p, chunk, fanout, _) in &files {
            let out = Command::new(BIN)
                .arg("--store")
                .arg(&store)
                .arg("add")
                .arg(p)
                .args(["--chunk-size", &chunk.to_string(), "--fanout", &fanout.to_string()])
                .output()
                .map_err(|e| e.to_string())?;
            ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
            roots.push(String::from_utf8_lossy(&out.stdout).trim().to_string());
        }
        runs.push(roots);
    }
    ensure(runs[0] == runs[1], || "roots differ between runs".into())?;
    for (got, (_, _, _, want)) in runs[0].iter().zip(&files) {
        ensure(got == want, || format!("root {got}, frozen {want}"))?;
    }
    Ok(format!("{} roots identical across 2 processes and equal to frozen values", files.len()))
}

fn gc_soundness() -> Outcome {
    let mut checked = 0;
    for seed in 0..1000 {
        checked += gc_oracle::run_config(seed)?;
    }
    Ok(format!("1000/1000 configurations, {checked} blocks compared"))
}

fn mfs_equivalence() -> Outcome {
    let mut observations = 0;
    for seed in 0..10_000 {
        observations += mfs_model::run_sequence(seed, 40)?;
    }
    Ok(format!("10000/10000 sequences, {observations} observations"))
}

fn byzantine_gateway() -> Outcome {
    let bad = MockGateway::start(Behavior::Corrupt).map_err(|e| e.to_string())?;
    let good: Vec<MockGateway> = (0..2)
        .map(|_| MockGateway::start(Behavior::Honest))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let client = GatewayClient::new(
        vec![bad.url(), good[0].url(), good[1].url()],
        Duration::from_secs(10),
        0,
    )
    .map_err(|e| e.to_string())?;

    let mut rng = StdRng::seed_from_u64(3);
    let params = ChunkParams::new(4096, 4).unwrap();
    let mut demoted_at = None;
    for i in 0..100 {
        let len = rng.gen_range(0..40_000);
        let data = random_bytes(&mut rng, len);
        for gw in [&bad, &good[0], &good[1]] {
            build_file_dag_bytes(&data, params, &*gw.store).map_err(|e| e.to_string())?;
        }
        let root = compute_root(&data, params);
        let got = client.fetch_file_bytes(root).map_err(|e| format!("fetch {i}: {e}"))?;
        ensure(got == data, || format!("fetch {i} returned wrong bytes"))?;

        let order = client.order();
        let health = client.health();
        let failures = health.iter().find(|h| h.url == bad.url()).unwrap().consecutive_failures;
        let last = order.last() == Some(&bad.url());
        if demoted_at.is_none() && last {
            demoted_at = Some(failures);
        }
        ensure(!(failures >= 3 && !last), || format!("{failures} failures but not demoted"))?;
    }
    let at = demoted_at.ok_or("corrupt gateway never demoted")?;
    ensure(at <= 3, || format!("demoted after {at} failures"))?;
    ensure(bad.store.gets() > 0, || "corrupt gateway was never asked".into())?;
    Ok(format!("100/100 correct, corrupt gateway demoted after {at} failures"))
}

fn dataset_laziness() -> Outcome {
    let n = 1_000_000usize;
    let data = random_bytes(&mut StdRng::seed_from_u64(7), 100 * n);
    let gw = MockGateway::start(Behavior::Honest).map_err(|e| e.to_string())?;
    let spec = DatasetSpec::new("lazy", vec![ColumnSpec::fixed("x", Dtype::U8, vec![n as u64])]);
    let (root, manifest) = build_dataset(&spec, &[ColumnData::Fixed(&data)], &*gw.store).map_err(|e| e.to_string())?;
    let chunks = manifest.chunk_cids["x"].len();
    ensure(chunks == 7, || format!("{chunks} chunks"))?;
    let client = GatewayClient::new(vec![gw.url()], Duration::from_secs(30), 0).map_err(|e| e.to_string())?;

    let mut rng = StdRng::seed_from_u64(8);
    for _ in 0..10 {
        let i = rng.gen_range(0..100u64);
        let reader = DatasetReader::open(root, CountingSource::new(&client), 4).map_err(|e| e.to_string())?;
        reader.source().reset();
        let before = gw.store.gets();
        let s = reader.get_sample("x", i).map_err(|e| e.to_string())?;
        ensure(s.data == data[i as usize * n..(i as usize + 1) * n], || format!("sample {i} differs"))?;
        let (client_gets, server_gets) = (reader.source().gets(), gw.store.gets() - before);
        ensure(client_gets == 1 && server_gets == 1, || {
            format!("sample {i}: {client_gets} fetches ({server_gets} served)")
        })?;
    }

    let reader = DatasetReader::open(root, CountingSource::new(&client), 4).map_err(|e| e.to_string())?;
    reader.source().reset();
    let before = gw.store.gets();
    let mut joined = Vec::with_capacity(data.len());
    for s in reader.iterate("x", Order::Sequential) {
        joined.extend(s.map_err(|e| e.to_string())?.data);
    }
    ensure(joined == data, || "sequential pass differs".into())?;
    let (client_gets, server_gets) = (reader.source().gets(), gw.store.gets() - before);
    ensure(client_gets == 7 && server_gets == 7, || {
        format!("full pass: {client_gets} fetches ({server_gets} served)")
    })?;
    Ok("1 fetch per sample (10 random samples), 7 for a full pass".into())
}

/// Reads leaves straight from the block files, without hash checks, and
/// rebuilds the root from their concatenation.
fn rebuild_from_disk(store: &BlockStore, root: &Cid, params: ChunkParams) -> Option<Cid> {
    fn walk(store: &BlockStore, cid: &Cid, out: &mut Vec<u8>) -> Option<()> {
        let bytes = std::fs::read(store.block_path(cid)).ok()?;
        if cid.codec() == cadfs_core::cid::RAW {
            out.extend(bytes);
            return Some(());
        }
        for link in DagNode::decode(&bytes).ok()?.links() {
            walk(store, &link.cid, out)?;
        }
        Some(())
    }
    let mut data = vec![];
    walk(store, root, &mut data)?;
    Some(compute_root(&data, params))
}

fn asset_verification() -> Outcome {
    let mut rng = StdRng::seed_from_u64(100);
    let params = ChunkParams::new(2048, 4).unwrap();
    let key = Keypair::generate(&mut rng);
    let (mut block_trials, mut ddo_trials) = (0, 0);
    for trial in 0..100 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let store = BlockStore::open(dir.path().join("store")).map_err(|e| e.to_string())?;
        let registry = Registry::open(dir.path().join("registry.jsonl")).map_err(|e| e.to_string())?;
        let len = rng.gen_range(1..30_000);
        let data = random_bytes(&mut rng, len);
        let root = build_file_dag_bytes(&data, params, &store).map_err(|e| e.to_string())?;
        let meta = AssetMetadata {
            name: format!("asset-{trial}"),
            description: "weights".into(),
            author: "Ada Lovelace".into(),
            asset_type: Some(AssetType::Model),
            license: "Apache-2.0".into(),
        };
        let ddo = registry.publish(root, &meta, &key, &store).map_err(|e| e.to_string())?;
        let clean = verify_asset(&ddo.did, &registry, &store).map_err(|e| e.to_string())?;
        ensure(clean.signature_ok && clean.checksum_ok, || format!("trial {trial}: clean asset failed"))?;
        ensure(rebuild_from_disk(&store, &root, params) == Some(root), || "independent rebuild".into())?;

        if trial % 2 == 0 {
            block_trials += 1;
            let blocks = cadfs_core::dag::reachable(&store, &root).map_err(|e| e.to_string())?;
            let victim = blocks[rng.gen_range(0..blocks.len())];
            let path = store.block_path(&victim);
            let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            if rng.gen_bool(0.5) {
                let at = rng.gen_range(0..bytes.len());
                bytes[at] ^= 1 << rng.gen_range(0..8);
            } else {
                rng.fill_bytes(&mut bytes);
            }
            std::fs::write(&path, &bytes).map_err(|e| e.to_string())?;
            let r = verify_asset(&ddo.did, &registry, &store).map_err(|e| e.to_string())?;
            ensure(r.signature_ok && !r.checksum_ok, || format!("trial {trial}: block tamper not flagged"))?;
            let rebuilt = rebuild_from_disk(&store, &root, params);
            ensure(rebuilt != Some(root), || format!("trial {trial}: oracle disagrees"))?;
        } else {
            ddo_trials += 1;
            let line = std::fs::read_to_string(registry.path()).map_err(|e| e.to_string())?;
            let edited = edit_ddo_line(&line, &mut rng)?;
            std::fs::write(registry.path(), &edited).map_err(|e| e.to_string())?;
            let record = registry.records().map_err(|e| e.to_string())?.pop().ok_or("empty log")?;
            ensure(record != ddo, || "edit did not change the document".into())?;
            let r = verify_asset(&record.did, &registry, &store).map_err(|e| e.to_string())?;
            ensure(!r.signature_ok, || format!("trial {trial}: DDO edit not flagged"))?;
        }
    }
    Ok(format!(
        "100/100 flagged ({block_trials} block tampers, {ddo_trials} document edits)"
    ))
}

/// Substitutes one character inside one string value of the logged
/// document, retrying until the edited line still parses.
fn edit_ddo_line(line: &str, rng: &mut StdRng) -> Result<String, String> {
    let bytes = line.as_bytes();
    // byte ranges of string values (skip keys: a value follows a ':')
    let mut values = vec![];
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'"' {
            let start = i + 1;
            let mut end = start;
            while bytes[end] != b'"' {
                end += 1;
            }
            if start > 1 && bytes[start - 2] == b':' && end > start {
                values.push(start..end);
            }
            i = end + 1;
        } else {
            i += 1;
        }
    }
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz234567";
    for _ in 0..1000 {
        let range = values[rng.gen_range(0..values.len())].clone();
        let at = rng.gen_range(range);
        let mut edited = bytes.to_vec();
        let mut c = edited[at];
        while c == edited[at] {
            c = ALPHABET[rng.gen_range(0..ALPHABET.len())];
        }
        edited[at] = c;
        let text = String::from_utf8(edited).map_err(|e| e.to_string())?;
        let parses = serde_json::from_str::<serde_json::Value>(text.trim())
            .ok()
            .and_then(|v| serde_json::from_value::<cadfs_core::registry::Ddo>(v["ddo"].clone()).ok())
            .is_some();
        if parses {
            return Ok(text);
        }
    }
    Err("no parseable edit found".into())
}

fn main() {
    let criteria: &[(&str, fn() -> Outcome)] = &[
        ("chunk-size default", chunk_size_default),
        ("round-trip fidelity", round_trip),
        ("determinism", determinism),
        ("gc soundness", gc_soundness),
        ("mfs model equivalence", mfs_equivalence),
        ("byzantine gateway", byzantine_gateway),
        ("dataset laziness", dataset_laziness),
        ("asset verification", asset_verification),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
