//! HTTP networking: a read/write gateway client with sequential fallback, an
//! embedded gateway server, and a remote pinning-service client.
//!
//! Gateway endpoints:
//!
//! | method | path                          | response                                   |
//! |--------|-------------------------------|--------------------------------------------|
//! | GET    | `/health`                     | 200                                        |
//! | GET    | `/ipfs/{cid}?format=raw`      | the single block, verbatim                 |
//! | GET    | `/ipfs/{cid}[/{path...}]`     | reassembled file, or a JSON dir listing    |
//! | POST   | `/api/v0/add?chunk-size&fanout` | raw body in, rendered root CID out       |
//!
//! Errors: 400 malformed CID or parameters, 404 unknown CID or path, 422
//! undecodable interior node.

mod client;
mod config;
pub mod mock;
mod pinning;
mod server;

pub use client::{GatewayClient, GatewayHealth, PushOptions};
pub use config::{NetConfig, PinningServiceConfig};
pub use pinning::{PinFilter, PinStatus, PinningClient, RemotePinRecord};
pub use server::{serve, GatewayServer, ServeOptions};

use std::time::Duration;

/// Retry delay before attempt `attempt + 1`: `base * 2^attempt`, scaled by a
/// random factor in [0.8, 1.2].
pub(crate) fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    use rand::Rng;
    let exp = base.saturating_mul(1u32 << attempt.min(16));
    exp.mul_f64(rand::thread_rng().gen_range(0.8..=1.2))
}

/// `{base}/{segments...}` with each segment percent-encoded.
pub(crate) fn join_url(base: &str, segments: &[&str]) -> crate::Result<url::Url> {
    let mut url = url::Url::parse(base)
        .map_err(|e| crate::Error::Config(format!("bad URL {base:?}: {e}")))?;
    {
        let mut path = url
            .path_segments_mut()
            .map_err(|_| crate::Error::Config(format!("URL {base:?} cannot be a base")))?;
        path.pop_if_empty();
        for s in segments {
            path.push(s);
        }
    }
    Ok(url)
}
