//! Randomized pin/DAG configurations checked against a brute-force
//! reachability oracle that never decodes a block: it only uses the edges
//! recorded while the configuration was generated.

use cadfs_core::dag::{DagNode, Link};
use cadfs_core::store::BlockStore;
use cadfs_core::Cid;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::{BTreeSet, HashMap};

pub struct Config {
    pub edges: HashMap<Cid, Vec<Cid>>,
    pub all: BTreeSet<Cid>,
    pub pins: Vec<(String, Cid)>,
}

/// Fixpoint over the recorded edges: keep adding children of kept blocks
/// until nothing changes.
pub fn reachable(config: &Config, roots: &[Cid]) -> BTreeSet<Cid> {
    let mut keep: BTreeSet<Cid> = roots.iter().copied().collect();
    loop {
        let before = keep.len();
        for (parent, children) in &config.edges {
            if keep.contains(parent) {
                keep.extend(children.iter().copied());
            }
        }
        if keep.len() == before {
            return keep;
        }
    }
}

/// Writes a random DAG forest into `store` and pins some of it.
pub fn generate(store: &BlockStore, rng: &mut StdRng) -> Config {
    let mut cfg = Config {
        edges: HashMap::new(),
        all: BTreeSet::new(),
        pins: Vec::new(),
    };
    let mut blocks: Vec<(Cid, u64)> = Vec::new();
    for _ in 0..rng.gen_range(1..12) {
        let len = rng.gen_range(0..40);
        let data: Vec<u8> = (0..len).map(|_| rng.gen_range(0..4u8)).collect();
        let cid = store.put(&data, cadfs_core::cid::RAW).unwrap();
        cfg.all.insert(cid);
        blocks.push((cid, len as u64));
    }
    for _ in 0..rng.gen_range(0..15) {
        let n = rng.gen_range(1..=blocks.len().min(5));
        let mut children: Vec<(Cid, u64)> = (0..n).map(|_| blocks[rng.gen_range(0..blocks.len())]).collect();
        let node = if rng.gen_bool(0.5) {
            children.dedup_by_key(|c| c.0);
            let links = children
                .iter()
                .enumerate()
                .map(|(i, (c, s))| Link::named(format!("e{i}"), *c, *s))
                .collect();
            DagNode::directory(links).unwrap()
        } else {
            DagNode::file(children.iter().map(|(c, s)| Link::unnamed(*c, *s)).collect()).unwrap()
        };
        let (cid, bytes) = node.to_block();
        store.put(&bytes, cadfs_core::cid::DAG_NODE).unwrap();
        if cfg.all.insert(cid) {
            cfg.edges.insert(cid, children.iter().map(|c| c.0).collect());
        }
        blocks.push((cid, node.total_size()));
    }
    for i in 0..rng.gen_range(0..4) {
        let (cid, _) = blocks[rng.gen_range(0..blocks.len())];
        store.pin(&format!("p{i}"), &cid).unwrap();
        cfg.pins.push((format!("p{i}"), cid));
    }
    cfg
}

/// One configuration: generate, maybe unpin something, collect, compare.
/// Returns the number of surviving blocks.
pub fn run_config(seed: u64) -> Result<usize, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = BlockStore::open(dir.path()).map_err(|e| e.to_string())?;
    let mut cfg = generate(&store, &mut rng);
    if !cfg.pins.is_empty() && rng.gen_bool(0.3) {
        let (name, _) = cfg.pins.remove(rng.gen_range(0..cfg.pins.len()));
        store.unpin(&name).map_err(|e| e.to_string())?;
    }
    let roots: Vec<Cid> = cfg.pins.iter().map(|p| p.1).collect();
    let expected = reachable(&cfg, &roots);

    let report = store.gc().map_err(|e| e.to_string())?;
    let survivors: BTreeSet<Cid> = store.cids().map_err(|e| e.to_string())?.into_iter().collect();
    if survivors != expected {
        return Err(format!(
            "seed {seed}: {} survivors, oracle says {} (extra {:?}, missing {:?})",
            survivors.len(),
            expected.len(),
            survivors.difference(&expected).collect::<Vec<_>>(),
            expected.difference(&survivors).collect::<Vec<_>>()
        ));
    }
    if report.retained as usize != expected.len() || (report.deleted + report.retained) as usize != cfg.all.len() {
        return Err(format!("seed {seed}: report {report:?} disagrees with oracle"));
    }
    // a second collection is a no-op
    let again = store.gc().map_err(|e| e.to_string())?;
    if again.deleted != 0 {
        return Err(format!("seed {seed}: second gc deleted {}", again.deleted));
    }
    Ok(survivors.len())
}
