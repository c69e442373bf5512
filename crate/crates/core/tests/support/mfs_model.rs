//! In-memory tree-of-maps model of the namespace, and a randomized driver
//! that replays the same operation sequence against the model and a real
//! `Mfs`, comparing every observation.

use cadfs_core::dag::{compute_root, ChunkParams, EntryKind};
use cadfs_core::mfs::{CpSource, Mfs};
use cadfs_core::Error;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    File(Vec<u8>),
    Dir(BTreeMap<String, Node>),
}

impl Node {
    fn size(&self) -> u64 {
        match self {
            Node::File(d) => d.len() as u64,
            Node::Dir(m) => m.values().map(Node::size).sum(),
        }
    }

    fn kind(&self) -> EntryKind {
        match self {
            Node::File(_) => EntryKind::File,
            Node::Dir(_) => EntryKind::Dir,
        }
    }
}

pub type Outcome<T> = Result<T, &'static str>;

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::NotFound(_) => "NotFound",
        Error::NotADirectory(_) => "NotADirectory",
        Error::Exists(_) => "Exists",
        Error::IsDirectory(_) => "IsDirectory",
        Error::InvalidName(_) => "InvalidName",
        Error::InvalidPath(_) => "InvalidPath",
        other => panic!("unexpected error from namespace: {other}"),
    }
}

fn parse(path: &str) -> Outcome<Vec<String>> {
    let t = path.strip_prefix('/').unwrap_or(path);
    let t = t.strip_suffix('/').unwrap_or(t);
    if t.is_empty() {
        return Ok(vec![]);
    }
    t.split('/')
        .map(|c| {
            if c.is_empty() || c == "." || c == ".." {
                Err("InvalidName")
            } else {
                Ok(c.to_string())
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub root: Node,
}

impl Default for Model {
    fn default() -> Self {
        Self {
            root: Node::Dir(BTreeMap::new()),
        }
    }
}

impl Model {
    fn resolve(&self, parts: &[String]) -> Outcome<&Node> {
        let mut cur = &self.root;
        for p in parts {
            match cur {
                Node::Dir(m) => cur = m.get(p).ok_or("NotFound")?,
                Node::File(_) => return Err("NotADirectory"),
            }
        }
        Ok(cur)
    }

    fn parent_mut<'a>(root: &'a mut Node, parts: &[String]) -> Outcome<&'a mut BTreeMap<String, Node>> {
        let mut cur = root;
        for p in parts {
            match cur {
                Node::Dir(m) => cur = m.get_mut(p).ok_or("NotFound")?,
                Node::File(_) => return Err("NotADirectory"),
            }
        }
        match cur {
            Node::Dir(m) => Ok(m),
            Node::File(_) => Err("NotADirectory"),
        }
    }

    pub fn mkdir(&mut self, path: &str, parents: bool) -> Outcome<()> {
        let parts = parse(path)?;
        let Some((last, init)) = parts.split_last() else {
            return if parents { Ok(()) } else { Err("Exists") };
        };
        if parents {
            let mut cur = &mut self.root;
            for p in init {
                let Node::Dir(m) = cur else { return Err("NotADirectory") };
                cur = m.entry(p.clone()).or_insert_with(|| Node::Dir(BTreeMap::new()));
            }
            let Node::Dir(m) = cur else { return Err("NotADirectory") };
            return match m.get(last) {
                None => {
                    m.insert(last.clone(), Node::Dir(BTreeMap::new()));
                    Ok(())
                }
                Some(Node::Dir(_)) => Ok(()),
                Some(Node::File(_)) => Err("Exists"),
            };
        }
        let m = Self::parent_mut(&mut self.root, init)?;
        if m.contains_key(last) {
            return Err("Exists");
        }
        m.insert(last.clone(), Node::Dir(BTreeMap::new()));
        Ok(())
    }

    pub fn write(&mut self, path: &str, data: &[u8]) -> Outcome<()> {
        let parts = parse(path)?;
        let Some((last, init)) = parts.split_last() else { return Err("IsDirectory") };
        let m = Self::parent_mut(&mut self.root, init)?;
        if let Some(Node::Dir(_)) = m.get(last) {
            return Err("IsDirectory");
        }
        m.insert(last.clone(), Node::File(data.to_vec()));
        Ok(())
    }

    pub fn cp(&mut self, src: &str, dst: &str) -> Outcome<()> {
        let sparts = parse(src)?;
        let node = self.resolve(&sparts)?.clone();
        let dparts = parse(dst)?;
        let Some((last, init)) = dparts.split_last() else { return Err("Exists") };
        let m = Self::parent_mut(&mut self.root, init)?;
        if m.contains_key(last) {
            return Err("Exists");
        }
        m.insert(last.clone(), node);
        Ok(())
    }

    pub fn mv(&mut self, src: &str, dst: &str) -> Outcome<()> {
        let sparts = parse(src)?;
        let dparts = parse(dst)?;
        let Some((slast, sinit)) = sparts.split_last() else { return Err("InvalidPath") };
        let Some((dlast, dinit)) = dparts.split_last() else { return Err("Exists") };
        let node = self.resolve(&sparts)?.clone();
        let mut next = self.root.clone();
        Self::parent_mut(&mut next, sinit)?.remove(slast);
        let m = Self::parent_mut(&mut next, dinit)?;
        if m.contains_key(dlast) {
            return Err("Exists");
        }
        m.insert(dlast.clone(), node);
        self.root = next;
        Ok(())
    }

    pub fn rm(&mut self, path: &str) -> Outcome<()> {
        let parts = parse(path)?;
        let Some((last, init)) = parts.split_last() else { return Err("InvalidPath") };
        let m = Self::parent_mut(&mut self.root, init)?;
        m.remove(last).map(|_| ()).ok_or("NotFound")
    }

    /// (name, size, kind, file bytes) per entry.
    pub fn ls(&self, path: &str) -> Outcome<Vec<(String, u64, EntryKind, Option<Vec<u8>>)>> {
        let parts = parse(path)?;
        let node = self.resolve(&parts)?;
        let describe = |name: &str, n: &Node| {
            let data = match n {
                Node::File(d) => Some(d.clone()),
                Node::Dir(_) => None,
            };
            (name.to_string(), n.size(), n.kind(), data)
        };
        Ok(match node {
            Node::File(_) => vec![describe(parts.last().map(String::as_str).unwrap_or(""), node)],
            Node::Dir(m) => m.iter().map(|(k, v)| describe(k, v)).collect(),
        })
    }

    pub fn read(&self, path: &str) -> Outcome<Vec<u8>> {
        match self.resolve(&parse(path)?)? {
            Node::File(d) => Ok(d.clone()),
            Node::Dir(_) => Err("IsDirectory"),
        }
    }

    pub fn stat(&self, path: &str) -> Outcome<(u64, EntryKind)> {
        let node = self.resolve(&parse(path)?)?;
        Ok((node.size(), node.kind()))
    }

    /// Every path in the tree, directories before their children.
    pub fn paths(&self) -> Vec<(String, Node)> {
        fn walk(prefix: &str, node: &Node, out: &mut Vec<(String, Node)>) {
            if let Node::Dir(m) = node {
                for (k, v) in m {
                    let p = format!("{prefix}/{k}");
                    out.push((p.clone(), v.clone()));
                    walk(&p, v, out);
                }
            }
        }
        let mut out = vec![];
        walk("", &self.root, &mut out);
        out
    }
}

fn random_path(rng: &mut StdRng) -> String {
    if rng.gen_bool(0.03) {
        return ["/", "", "/a//b", "/../a", "a/"][rng.gen_range(0..5)].to_string();
    }
    let depth = rng.gen_range(1..=3);
    let mut p = String::new();
    for _ in 0..depth {
        p.push('/');
        p.push_str(["a", "b", "c", "d"][rng.gen_range(0..4)]);
    }
    p
}

fn random_data(rng: &mut StdRng) -> Vec<u8> {
    let len = match rng.gen_range(0..10) {
        0 => 0,
        1..=6 => rng.gen_range(1..8),
        _ => rng.gen_range(8..60),
    };
    (0..len).map(|_| rng.gen_range(0..4u8)).collect()
}

fn res<T>(r: Result<T, Error>) -> Outcome<T> {
    r.map_err(|e| error_kind(&e))
}

/// Replays `ops` random operations from `seed`. Returns the number of
/// observations compared, or a description of the first divergence.
pub fn run_sequence(seed: u64, ops: usize) -> Result<usize, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let params = ChunkParams::new(8, 2).unwrap();
    let mfs = Mfs::in_memory().with_params(params);
    let mut model = Model::default();
    let mut observations = 0;

    for step in 0..ops {
        let ctx = |what: &str| format!("seed {seed} step {step}: {what}");
        match rng.gen_range(0..10) {
            0 | 1 => {
                let p = random_path(&mut rng);
                let parents = rng.gen_bool(0.3);
                let want = model.mkdir(&p, parents);
                let got = res(mfs.mkdir(&p, parents)).map(|_| ());
                if want != got {
                    return Err(ctx(&format!("mkdir {p} -p={parents}: model {want:?} mfs {got:?}")));
                }
            }
            2 | 3 => {
                let p = random_path(&mut rng);
                let data = random_data(&mut rng);
                let want = model.write(&p, &data);
                let got = res(mfs.write(&p, &data)).map(|_| ());
                if want != got {
                    return Err(ctx(&format!("write {p}: model {want:?} mfs {got:?}")));
                }
            }
            4 => {
                let (s, d) = (random_path(&mut rng), random_path(&mut rng));
                let want = model.cp(&s, &d);
                let got = res(mfs.cp(CpSource::Path(&s), &d)).map(|_| ());
                if want != got {
                    return Err(ctx(&format!("cp {s} {d}: model {want:?} mfs {got:?}")));
                }
            }
            5 => {
                let (s, d) = (random_path(&mut rng), random_path(&mut rng));
                let want = model.mv(&s, &d);
                let got = res(mfs.mv(&s, &d)).map(|_| ());
                if want != got {
                    return Err(ctx(&format!("mv {s} {d}: model {want:?} mfs {got:?}")));
                }
            }
            6 => {
                let p = random_path(&mut rng);
                let want = model.rm(&p);
                let got = res(mfs.rm(&p)).map(|_| ());
                if want != got {
                    return Err(ctx(&format!("rm {p}: model {want:?} mfs {got:?}")));
                }
            }
            _ => {
                let p = if rng.gen_bool(0.2) { "/".to_string() } else { random_path(&mut rng) };
                observe(&model, &mfs, &p, params).map_err(|e| ctx(&e))?;
                observations += 3;
            }
        }
    }

    // final full-tree comparison
    for (path, _) in model.paths() {
        observe(&model, &mfs, &path, params).map_err(|e| format!("seed {seed} final: {e}"))?;
        observations += 3;
    }
    observe(&model, &mfs, "/", params).map_err(|e| format!("seed {seed} final: {e}"))?;
    observations += 3;

    // canonical roots: rebuilding the same logical tree from scratch, in a
    // different order, lands on the same root
    let rebuilt = Mfs::in_memory().with_params(params);
    let mut paths = model.paths();
    paths.reverse();
    paths.sort_by_key(|(p, _)| p.matches('/').count());
    for (path, node) in paths {
        match node {
            Node::Dir(_) => rebuilt.mkdir(&path, true).map(|_| ()),
            Node::File(data) => rebuilt.write(&path, &data).map(|_| ()),
        }
        .map_err(|e| format!("seed {seed} rebuild {path}: {e}"))?;
    }
    if rebuilt.root() != mfs.root() {
        return Err(format!("seed {seed}: rebuilt root differs from replayed root"));
    }
    Ok(observations)
}

fn observe<S: cadfs_core::mfs::MfsStore>(
    model: &Model,
    mfs: &Mfs<S>,
    p: &str,
    params: ChunkParams,
) -> Result<(), String> {
    let want = model.ls(p);
    let got = res(mfs.ls(p));
    match (&want, &got) {
        (Ok(w), Ok(g)) => {
            if w.len() != g.len() {
                return Err(format!("ls {p}: model {} entries, mfs {}", w.len(), g.len()));
            }
            for ((name, size, kind, data), e) in w.iter().zip(g) {
                if (name, size, kind) != (&e.name, &e.size, &e.kind) {
                    return Err(format!("ls {p}: model {name}/{size}/{kind}, mfs {e:?}"));
                }
                if let Some(d) = data {
                    if compute_root(d, params) != e.cid {
                        return Err(format!("ls {p}: cid of {name} does not match its content"));
                    }
                }
            }
        }
        (Err(w), Err(g)) if w == g => {}
        _ => return Err(format!("ls {p}: model {:?} mfs {:?}", want.map(|v| v.len()), got.map(|v| v.len()))),
    }
    let want = model.read(p);
    let got = res(mfs.read(p));
    if want != got {
        return Err(format!("read {p}: model {want:?} mfs {got:?}"));
    }
    let want = model.stat(p);
    let got = res(mfs.stat(p)).map(|s| (s.size, s.kind));
    if want != got {
        return Err(format!("stat {p}: model {want:?} mfs {got:?}"));
    }
    Ok(())
}
