//! Test doubles: a scriptable gateway and an in-process pinning service.

use super::pinning::{PinList, PinSpec, PinStatus, RemotePinRecord};
use super::server::{serve, GatewayServer, ServeOptions};
use crate::blocks::{BlockSink, BlockSource, MemoryStore};
use crate::cid::Cid;
use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use tiny_http::{Header, Method, Response, Server};

/// How a [`MockGateway`] answers block requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Honest,
    /// Serves same-length garbage instead of the real bytes.
    Corrupt,
    /// Answers every request with 503.
    Unavailable,
    /// Pretends to have no blocks.
    Empty,
}

/// Block store wrapper whose reads follow a scripted [`Behavior`].
#[derive(Debug)]
pub struct ScriptedStore {
    inner: MemoryStore,
    behavior: Mutex<Behavior>,
    gets: AtomicUsize,
}

impl ScriptedStore {
    pub fn new(behavior: Behavior) -> Self {
        Self {
            inner: MemoryStore::new(),
            behavior: Mutex::new(behavior),
            gets: AtomicUsize::new(0),
        }
    }

    pub fn set_behavior(&self, behavior: Behavior) {
        *self.behavior.lock().unwrap() = behavior;
    }

    pub fn inner(&self) -> &MemoryStore {
        &self.inner
    }

    /// Number of block reads served (or refused).
    pub fn gets(&self) -> usize {
        self.gets.load(Ordering::SeqCst)
    }
}

impl BlockSource for ScriptedStore {
    fn get_block(&self, cid: &Cid) -> Result<Vec<u8>> {
        self.gets.fetch_add(1, Ordering::SeqCst);
        match *self.behavior.lock().unwrap() {
            Behavior::Honest => self.inner.get_block(cid),
            Behavior::Corrupt => {
                let mut bytes = self.inner.get_block(cid)?;
                if bytes.is_empty() {
                    bytes.push(0xff);
                } else {
                    for b in &mut bytes {
                        *b = !*b;
                    }
                }
                Ok(bytes)
            }
            Behavior::Unavailable => Err(Error::ServiceUnavailable("scripted outage".into())),
            Behavior::Empty => Err(Error::BlockNotFound(*cid)),
        }
    }
}

impl BlockSink for ScriptedStore {
    fn put_block(&self, cid: &Cid, data: &[u8]) -> Result<()> {
        self.inner.put_block(cid, data)
    }
}

/// Gateway server over a [`ScriptedStore`], on an ephemeral loopback port.
#[derive(Debug)]
pub struct MockGateway {
    pub store: Arc<ScriptedStore>,
    server: GatewayServer,
}

impl MockGateway {
    pub fn start(behavior: Behavior) -> Result<Self> {
        Self::start_with(behavior, ServeOptions::default())
    }

    pub fn start_with(behavior: Behavior, options: ServeOptions) -> Result<Self> {
        let store = Arc::new(ScriptedStore::new(behavior));
        let server = serve(store.clone(), "127.0.0.1:0", options)?;
        Ok(Self { store, server })
    }

    pub fn url(&self) -> String {
        self.server.url()
    }
}

#[derive(Debug, Default)]
struct PinState {
    records: BTreeMap<String, RemotePinRecord>,
    fail_cids: HashSet<Cid>,
}

/// In-process pinning service implementing the client's API subset.
///
/// New pins start `queued`; each status poll advances a record one step
/// (queued → pinning → pinned, or failed for CIDs marked with
/// [`MockPinningService::fail_cid`]).
pub struct MockPinningService {
    url: String,
    server: Arc<Server>,
    state: Arc<Mutex<PinState>>,
    outages: Arc<AtomicU32>,
    worker: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for MockPinningService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockPinningService").field("url", &self.url).finish()
    }
}

impl MockPinningService {
    pub fn start(token: &str) -> Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        let addr = server.server_addr().to_ip().expect("bound to an IP");
        let server = Arc::new(server);
        let state = Arc::new(Mutex::new(PinState::default()));
        let outages = Arc::new(AtomicU32::new(0));
        let counter = Arc::new(AtomicU64::new(0));
        let worker = {
            let (server, state, outages, token) = (server.clone(), state.clone(), outages.clone(), token.to_string());
            std::thread::spawn(move || {
                while let Ok(mut req) = server.recv() {
                    let (status, body) = handle_pin_request(&mut req, &token, &state, &outages, &counter);
                    let resp = Response::from_string(body)
                        .with_status_code(status)
                        .with_header(Header::from_bytes("Content-Type", "application/json").unwrap());
                    let _ = req.respond(resp);
                }
            })
        };
        Ok(Self {
            url: format!("http://{addr}"),
            server,
            state,
            outages,
            worker: Some(worker),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// The next `n` requests get a 503.
    pub fn inject_outages(&self, n: u32) {
        self.outages.store(n, Ordering::SeqCst);
    }

    pub fn fail_cid(&self, cid: Cid) {
        self.state.lock().unwrap().fail_cids.insert(cid);
    }

    pub fn records(&self) -> Vec<RemotePinRecord> {
        self.state.lock().unwrap().records.values().cloned().collect()
    }
}

impl Drop for MockPinningService {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn handle_pin_request(
    req: &mut tiny_http::Request,
    token: &str,
    state: &Mutex<PinState>,
    outages: &AtomicU32,
    counter: &AtomicU64,
) -> (u16, String) {
    let err = |code: u16, reason: &str| (code, serde_json::json!({"error": {"reason": reason}}).to_string());
    if outages
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return err(503, "INJECTED_OUTAGE");
    }
    let expected = format!("Bearer {token}");
    let authorized = req
        .headers()
        .iter()
        .any(|h| h.field.equiv("Authorization") && h.value.as_str() == expected);
    if !authorized {
        return err(401, "UNAUTHORIZED");
    }

    let raw_url = req.url().to_string();
    let (path, query) = raw_url.split_once('?').unwrap_or((&raw_url, ""));
    let segs: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    let mut st = state.lock().unwrap();
    match (req.method(), segs.as_slice()) {
        (Method::Post, ["pins"]) => {
            let mut body = String::new();
            if req.as_reader().read_to_string(&mut body).is_err() {
                return err(400, "BAD_BODY");
            }
            let Ok(spec) = serde_json::from_str::<PinSpec>(&body) else {
                return err(400, "BAD_REQUEST");
            };
            let id = format!("req-{}", counter.fetch_add(1, Ordering::SeqCst) + 1);
            let record = RemotePinRecord {
                request_id: id.clone(),
                status: PinStatus::Queued,
                created: chrono::Utc::now(),
                pin: spec,
            };
            st.records.insert(id, record.clone());
            (202, serde_json::to_string(&record).unwrap())
        }
        (Method::Get, ["pins"]) => {
            let filters: Vec<(String, String)> =
                url::form_urlencoded::parse(query.as_bytes()).into_owned().collect();
            let results: Vec<RemotePinRecord> = st
                .records
                .values()
                .filter(|r| {
                    filters.iter().all(|(k, v)| match k.as_str() {
                        "cid" => r.pin.cid.render() == *v,
                        "name" => r.pin.name == *v,
                        "status" => r.status.as_str() == v,
                        _ => true,
                    })
                })
                .cloned()
                .collect();
            let list = PinList {
                count: results.len(),
                results,
            };
            (200, serde_json::to_string(&list).unwrap())
        }
        (Method::Get, ["pins", id]) => {
            let fail = st.fail_cids.clone();
            let Some(rec) = st.records.get_mut(*id) else {
                return err(404, "NOT_FOUND");
            };
            let next = match rec.status {
                PinStatus::Queued => Some(PinStatus::Pinning),
                PinStatus::Pinning if fail.contains(&rec.pin.cid) => Some(PinStatus::Failed),
                PinStatus::Pinning => Some(PinStatus::Pinned),
                _ => None,
            };
            if let Some(next) = next {
                debug_assert!(rec.status.can_advance_to(next));
                rec.status = next;
            }
            (200, serde_json::to_string(&*rec).unwrap())
        }
        (Method::Delete, ["pins", id]) => match st.records.remove(*id) {
            Some(_) => (202, String::new()),
            None => err(404, "NOT_FOUND"),
        },
        _ => err(404, "NO_SUCH_ENDPOINT"),
    }
}
