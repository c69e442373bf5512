use super::{backoff_delay, join_url, NetConfig};
use crate::blocks::BlockSource;
use crate::cid::Cid;
use crate::dag::{self, ChunkParams, FileReader, FileWalker};
use crate::error::{Error, Result};
use std::io::Read;
use std::sync::Mutex;
use std::time::{Duration, SystemTime};

/// Consecutive failures after which a gateway moves to the back of the order.
pub const DEMOTION_THRESHOLD: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayHealth {
    pub url: String,
    pub consecutive_failures: u32,
    pub last_ok: Option<SystemTime>,
}

/// Optional query parameters for `push_file`. Omitted values fall back to
/// the client's defaults locally and to the server's defaults remotely.
#[derive(Debug, Clone, Copy, Default)]
pub struct PushOptions {
    pub chunk_size: Option<usize>,
    pub fanout: Option<usize>,
}

impl From<ChunkParams> for PushOptions {
    fn from(p: ChunkParams) -> Self {
        Self {
            chunk_size: Some(p.chunk_size()),
            fanout: Some(p.fanout()),
        }
    }
}

/// Multi-gateway client. Gateways are tried in order; every fetched block is
/// verified against its CID before it is returned, so a lying gateway can
/// only cause a failover.
pub struct GatewayClient {
    agent: ureq::Agent,
    // current order; health travels with each entry
    gateways: Mutex<Vec<GatewayHealth>>,
    max_retries: u32,
    backoff_base: Duration,
}

impl std::fmt::Debug for GatewayClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GatewayClient")
            .field("gateways", &self.health())
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

impl GatewayClient {
    pub fn new(gateways: Vec<String>, request_timeout: Duration, max_retries: u32) -> Result<Self> {
        if gateways.is_empty() {
            return Err(Error::Config("at least one gateway is required".into()));
        }
        if request_timeout.is_zero() {
            return Err(Error::Config("request timeout must be positive".into()));
        }
        for g in &gateways {
            url::Url::parse(g).map_err(|e| Error::Config(format!("bad gateway URL {g:?}: {e}")))?;
        }
        Ok(Self {
            agent: ureq::AgentBuilder::new().timeout(request_timeout).build(),
            gateways: Mutex::new(
                gateways
                    .into_iter()
                    .map(|url| GatewayHealth {
                        url: url.trim_end_matches('/').to_string(),
                        consecutive_failures: 0,
                        last_ok: None,
                    })
                    .collect(),
            ),
            max_retries,
            backoff_base: Duration::from_millis(100),
        })
    }

    pub fn from_config(config: &NetConfig) -> Result<Self> {
        Self::new(
            config.gateways.clone(),
            Duration::from_secs_f64(config.request_timeout_s),
            config.max_retries_per_gateway,
        )
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    /// Gateways in the order the next request will try them.
    pub fn order(&self) -> Vec<String> {
        self.lock().iter().map(|g| g.url.clone()).collect()
    }

    pub fn health(&self) -> Vec<GatewayHealth> {
        self.lock().clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Vec<GatewayHealth>> {
        self.gateways.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn record_success(&self, url: &str) {
        let mut gws = self.lock();
        if let Some(g) = gws.iter_mut().find(|g| g.url == url) {
            g.consecutive_failures = 0;
            g.last_ok = Some(SystemTime::now());
        }
    }

    fn record_failure(&self, url: &str) {
        let mut gws = self.lock();
        if let Some(i) = gws.iter().position(|g| g.url == url) {
            gws[i].consecutive_failures += 1;
            if gws[i].consecutive_failures >= DEMOTION_THRESHOLD {
                let g = gws.remove(i);
                gws.push(g);
            }
        }
    }

    /// Runs `op` with retries on retryable failures.
    fn with_retries<T>(&self, mut op: impl FnMut() -> std::result::Result<T, Attempt>) -> std::result::Result<T, String> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(cause)) => return Err(cause),
                Err(Attempt::Retryable(cause)) if attempt >= self.max_retries => return Err(cause),
                Err(Attempt::Retryable(_)) => {
                    std::thread::sleep(backoff_delay(self.backoff_base, attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn classify(err: ureq::Error) -> Attempt {
        match err {
            ureq::Error::Status(code, _) if code >= 500 || code == 429 => {
                Attempt::Retryable(format!("HTTP {code}"))
            }
            ureq::Error::Status(404, _) => Attempt::Fatal("not found (HTTP 404)".into()),
            ureq::Error::Status(code, _) => Attempt::Fatal(format!("HTTP {code}")),
            ureq::Error::Transport(t) => Attempt::Retryable(t.to_string()),
        }
    }

    fn get_raw(&self, base: &str, cid: &Cid) -> std::result::Result<Vec<u8>, String> {
        let mut url = join_url(base, &["ipfs", &cid.render()]).map_err(|e| e.to_string())?;
        url.set_query(Some("format=raw"));
        self.with_retries(|| {
            let resp = self.agent.request_url("GET", &url).call().map_err(Self::classify)?;
            let mut body = Vec::new();
            resp.into_reader()
                .read_to_end(&mut body)
                .map_err(|e| Attempt::Retryable(format!("reading body: {e}")))?;
            if !cid.verify(&body) {
                return Err(Attempt::Fatal("checksum mismatch".into()));
            }
            Ok(body)
        })
    }

    /// Fetches one block, trying gateways in order.
    pub fn fetch_block(&self, cid: &Cid) -> Result<Vec<u8>> {
        let mut causes = Vec::new();
        for url in self.order() {
            match self.get_raw(&url, cid) {
                Ok(bytes) => {
                    self.record_success(&url);
                    return Ok(bytes);
                }
                Err(cause) => {
                    self.record_failure(&url);
                    causes.push((url, cause));
                }
            }
        }
        Err(Error::AllGatewaysFailed {
            cid: cid.render(),
            causes,
        })
    }

    /// Streams the file rooted at `root`, resolving every block through the
    /// gateways.
    pub fn fetch_file(&self, root: Cid) -> FileReader<&Self> {
        FileWalker::new(root, self).into_reader()
    }

    pub fn fetch_file_bytes(&self, root: Cid) -> Result<Vec<u8>> {
        dag::reassemble(root, self)
    }

    /// Uploads `data` to the first gateway that accepts it and checks the
    /// returned root against a locally computed one.
    pub fn push_file(&self, data: &[u8], opts: PushOptions) -> Result<Cid> {
        let defaults = ChunkParams::default();
        let params = ChunkParams::new(
            opts.chunk_size.unwrap_or(defaults.chunk_size()),
            opts.fanout.unwrap_or(defaults.fanout()),
        )?;
        let expected = dag::compute_root(data, params);
        let mut causes = Vec::new();
        for base in self.order() {
            let mut url = join_url(&base, &["api", "v0", "add"])?;
            {
                let mut q = url.query_pairs_mut();
                if let Some(n) = opts.chunk_size {
                    q.append_pair("chunk-size", &n.to_string());
                }
                if let Some(m) = opts.fanout {
                    q.append_pair("fanout", &m.to_string());
                }
            }
            if url.query() == Some("") {
                url.set_query(None);
            }
            let result = self.with_retries(|| {
                let resp = self
                    .agent
                    .request_url("POST", &url)
                    .set("Content-Type", "application/octet-stream")
                    .send_bytes(data)
                    .map_err(Self::classify)?;
                resp.into_string()
                    .map_err(|e| Attempt::Retryable(format!("reading body: {e}")))
            });
            match result {
                Ok(body) => {
                    self.record_success(&base);
                    let remote = body.trim();
                    if remote != expected.render() {
                        return Err(Error::RootMismatch {
                            local: expected,
                            remote: remote.to_string(),
                        });
                    }
                    return Ok(expected);
                }
                Err(cause) => {
                    self.record_failure(&base);
                    causes.push((base, cause));
                }
            }
        }
        Err(Error::AllGatewaysFailed {
            cid: "(push)".into(),
            causes,
        })
    }
}

impl BlockSource for GatewayClient {
    fn get_block(&self, cid: &Cid) -> Result<Vec<u8>> {
        self.fetch_block(cid)
    }
}
