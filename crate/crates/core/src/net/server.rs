use crate::blocks::{BlockSink, BlockSource};
use crate::cid::Cid;
use crate::dag::{self, ChunkParams, DagNode, NodeKind};
use crate::error::{Error, Result};
use percent_encoding::percent_decode_str;
use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use tiny_http::{Header, Method, Request, Response, Server};

#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    /// Parameters used by `/api/v0/add` when the request omits them.
    pub default_params: ChunkParams,
    pub workers: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            default_params: ChunkParams::default(),
            workers: 4,
        }
    }
}

/// Running embedded gateway. Dropping the handle stops it.
pub struct GatewayServer {
    addr: SocketAddr,
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
}

impl std::fmt::Debug for GatewayServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GatewayServer").field("addr", &self.addr).finish()
    }
}

impl GatewayServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops (it only stops when shut down from
    /// another handle or the process exits).
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for GatewayServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts a gateway over `store` on `bind` (use port 0 for an ephemeral
/// port).
pub fn serve<S>(store: Arc<S>, bind: &str, options: ServeOptions) -> Result<GatewayServer>
where
    S: BlockSource + BlockSink + Send + Sync + 'static,
{
    let server = Server::http(bind).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Config("gateway must listen on an IP address".into()))?;
    let server = Arc::new(server);
    let workers = (0..options.workers.max(1))
        .map(|_| {
            let server = server.clone();
            let store = store.clone();
            std::thread::spawn(move || {
                while let Ok(request) = server.recv() {
                    handle(&*store, options, request);
                }
            })
        })
        .collect();
    Ok(GatewayServer {
        addr,
        server,
        workers,
    })
}

struct Reply {
    status: u16,
    body: Vec<u8>,
    content_type: &'static str,
}

impl Reply {
    fn ok(body: Vec<u8>, content_type: &'static str) -> Self {
        Self {
            status: 200,
            body,
            content_type,
        }
    }

    fn error(status: u16, msg: impl std::fmt::Display) -> Self {
        Self {
            status,
            body: format!("{msg}\n").into_bytes(),
            content_type: "text/plain; charset=utf-8",
        }
    }

    fn from_error(err: &Error) -> Self {
        let status = match err {
            Error::BlockNotFound(_) | Error::NotFound(_) => 404,
            Error::BadPrefix | Error::Truncated | Error::InvalidCid(_) | Error::UnsupportedCodec(_)
            | Error::UnsupportedHash(_) | Error::UnsupportedVersion(_) | Error::InvalidParams(_) => 400,
            Error::BadMagic | Error::MalformedNode(_) => 422,
            Error::ServiceUnavailable(_) | Error::Busy => 503,
            _ => 500,
        };
        Self::error(status, err)
    }
}

fn handle<S: BlockSource + BlockSink>(store: &S, options: ServeOptions, mut request: Request) {
    let reply = route(store, options, &mut request);
    let response = Response::from_data(reply.body)
        .with_status_code(reply.status)
        .with_header(Header::from_bytes("Content-Type", reply.content_type).expect("static header"));
    let _ = request.respond(response);
}

fn route<S: BlockSource + BlockSink>(store: &S, options: ServeOptions, request: &mut Request) -> Reply {
    let raw_url = request.url().to_string();
    let (path, query) = raw_url.split_once('?').unwrap_or((&raw_url, ""));
    let query: Vec<(String, String)> = url::form_urlencoded::parse(query.as_bytes()).into_owned().collect();
    let segments: Vec<String> = path
        .split('/')
        .filter(|s| !s.is_empty())
        .map(|s| percent_decode_str(s).decode_utf8_lossy().into_owned())
        .collect();
    let segs: Vec<&str> = segments.iter().map(String::as_str).collect();

    match (request.method(), segs.as_slice()) {
        (Method::Get, ["health"]) => Reply::ok(b"ok\n".to_vec(), "text/plain; charset=utf-8"),
        (Method::Get, ["ipfs", cid, rest @ ..]) => {
            let raw = query.iter().any(|(k, v)| k == "format" && v == "raw");
            get_ipfs(store, cid, rest, raw).unwrap_or_else(|e| Reply::from_error(&e))
        }
        (Method::Post, ["api", "v0", "add"]) => {
            add(store, options, &query, request.as_reader()).unwrap_or_else(|e| Reply::from_error(&e))
        }
        (_, ["health"]) | (_, ["ipfs", ..]) | (_, ["api", "v0", "add"]) => Reply::error(405, "method not allowed"),
        _ => Reply::error(404, "no such endpoint"),
    }
}

fn get_ipfs<S: BlockSource>(store: &S, cid: &str, path: &[&str], raw: bool) -> Result<Reply> {
    let mut cid = Cid::parse(cid)?;
    for (i, name) in path.iter().enumerate() {
        let not_found = || Error::NotFound(path[..=i].join("/"));
        if cid.is_raw() {
            return Err(not_found());
        }
        let node = DagNode::decode(&dag::fetch_verified(store, &cid)?)?;
        if node.kind() != NodeKind::Directory {
            return Err(not_found());
        }
        cid = node.find(name).ok_or_else(not_found)?.cid;
    }
    if raw {
        // verbatim: the client does its own verification
        return Ok(Reply::ok(store.get_block(&cid)?, "application/vnd.ipld.raw"));
    }
    if !cid.is_raw() {
        let node = DagNode::decode(&dag::fetch_verified(store, &cid)?)?;
        if node.kind() == NodeKind::Directory {
            let links: Vec<_> = node
                .links()
                .iter()
                .map(|l| serde_json::json!({"name": l.name, "cid": l.cid, "size": l.size}))
                .collect();
            let body = serde_json::json!({"links": links, "total_size": node.total_size()});
            return Ok(Reply::ok(serde_json::to_vec(&body)?, "application/json"));
        }
    }
    Ok(Reply::ok(dag::reassemble(cid, store)?, "application/octet-stream"))
}

fn add<S: BlockSink>(
    store: &S,
    options: ServeOptions,
    query: &[(String, String)],
    body: &mut dyn Read,
) -> Result<Reply> {
    let param = |key: &str, default: usize| -> Result<usize> {
        match query.iter().find(|(k, _)| k == key) {
            None => Ok(default),
            Some((_, v)) => v
                .parse()
                .map_err(|_| Error::InvalidParams(format!("{key}={v:?} is not a number"))),
        }
    };
    let params = ChunkParams::new(
        param("chunk-size", options.default_params.chunk_size())?,
        param("fanout", options.default_params.fanout())?,
    )?;
    let root = dag::build_file_dag(body, params, store)?;
    Ok(Reply::ok(format!("{root}\n").into_bytes(), "text/plain; charset=utf-8"))
}
