//! Client for a remote pinning service.
//!
//! Implements the subset of the common pinning-service API shape used here:
//!
//! - `POST /pins` with `{"cid", "name"}` → 202 + record
//! - `GET /pins/{requestid}` → record
//! - `DELETE /pins/{requestid}` → 202
//! - `GET /pins[?cid=&name=&status=]` → `{"count", "results"}`
//!
//! Records look like
//! `{"requestid", "status", "created", "pin": {"cid", "name"}}`.
//! Every request carries `Authorization: Bearer <token>`.

use super::{backoff_delay, join_url};
use crate::cid::Cid;
use crate::error::{Error, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PinStatus {
    Queued,
    Pinning,
    Pinned,
    Failed,
}

impl PinStatus {
    /// Allowed forward transitions: queued → pinning → {pinned, failed}.
    pub fn can_advance_to(self, next: PinStatus) -> bool {
        matches!(
            (self, next),
            (PinStatus::Queued, PinStatus::Pinning)
                | (PinStatus::Pinning, PinStatus::Pinned)
                | (PinStatus::Pinning, PinStatus::Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, PinStatus::Pinned | PinStatus::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PinStatus::Queued => "queued",
            PinStatus::Pinning => "pinning",
            PinStatus::Pinned => "pinned",
            PinStatus::Failed => "failed",
        }
    }
}

impl std::str::FromStr for PinStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "queued" => Ok(PinStatus::Queued),
            "pinning" => Ok(PinStatus::Pinning),
            "pinned" => Ok(PinStatus::Pinned),
            "failed" => Ok(PinStatus::Failed),
            other => Err(Error::Protocol(format!("unknown pin status {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinSpec {
    pub cid: Cid,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemotePinRecord {
    #[serde(rename = "requestid")]
    pub request_id: String,
    pub status: PinStatus,
    pub created: DateTime<Utc>,
    pub pin: PinSpec,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct PinList {
    pub count: usize,
    pub results: Vec<RemotePinRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct PinFilter {
    pub cid: Option<Cid>,
    pub name: Option<String>,
    pub status: Option<PinStatus>,
}

pub struct PinningClient {
    base: String,
    token: String,
    agent: ureq::Agent,
    max_retries: u32,
    backoff_base: Duration,
}

impl std::fmt::Debug for PinningClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PinningClient")
            .field("base", &self.base)
            .field("token", &"<redacted>")
            .finish()
    }
}

impl PinningClient {
    pub fn new(base: impl Into<String>, token: impl Into<String>, timeout: Duration, max_retries: u32) -> Result<Self> {
        let base = base.into();
        url::Url::parse(&base).map_err(|e| Error::Config(format!("bad service URL {base:?}: {e}")))?;
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            token: token.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            max_retries,
            backoff_base: Duration::from_millis(100),
        })
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    fn send(&self, method: &str, url: &url::Url, body: Option<serde_json::Value>, id: &str) -> Result<Option<String>> {
        let mut attempt = 0;
        loop {
            let req = self
                .agent
                .request_url(method, url)
                .set("Authorization", &format!("Bearer {}", self.token));
            let result = match &body {
                Some(json) => req.send_json(json.clone()),
                None => req.call(),
            };
            let retry_cause = match result {
                Ok(resp) if resp.status() == 202 && method == "DELETE" => return Ok(None),
                Ok(resp) => {
                    return resp
                        .into_string()
                        .map(Some)
                        .map_err(|e| Error::Protocol(format!("reading response: {e}")))
                }
                Err(ureq::Error::Status(401, _)) | Err(ureq::Error::Status(403, _)) => {
                    return Err(Error::Unauthorized)
                }
                Err(ureq::Error::Status(404, _)) => return Err(Error::NoSuchPin(id.to_string())),
                Err(ureq::Error::Status(code, _)) if code >= 500 => format!("HTTP {code}"),
                Err(ureq::Error::Status(code, resp)) => {
                    let text = resp.into_string().unwrap_or_default();
                    return Err(Error::Protocol(format!("HTTP {code}: {}", text.trim())));
                }
                Err(ureq::Error::Transport(t)) => t.to_string(),
            };
            if attempt >= self.max_retries {
                return Err(Error::ServiceUnavailable(retry_cause));
            }
            std::thread::sleep(backoff_delay(self.backoff_base, attempt));
            attempt += 1;
        }
    }

    fn parse_record(text: Option<String>) -> Result<RemotePinRecord> {
        let text = text.ok_or_else(|| Error::Protocol("empty response".into()))?;
        serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("bad pin record: {e}")))
    }

    pub fn pin(&self, cid: &Cid, name: &str) -> Result<RemotePinRecord> {
        let url = join_url(&self.base, &["pins"])?;
        let body = serde_json::json!({"cid": cid, "name": name});
        Self::parse_record(self.send("POST", &url, Some(body), "")?)
    }

    pub fn status(&self, request_id: &str) -> Result<RemotePinRecord> {
        let url = join_url(&self.base, &["pins", request_id])?;
        Self::parse_record(self.send("GET", &url, None, request_id)?)
    }

    pub fn unpin(&self, request_id: &str) -> Result<()> {
        let url = join_url(&self.base, &["pins", request_id])?;
        self.send("DELETE", &url, None, request_id)?;
        Ok(())
    }

    pub fn list(&self, filter: &PinFilter) -> Result<Vec<RemotePinRecord>> {
        let mut url = join_url(&self.base, &["pins"])?;
        {
            let mut q = url.query_pairs_mut();
            if let Some(cid) = &filter.cid {
                q.append_pair("cid", &cid.render());
            }
            if let Some(name) = &filter.name {
                q.append_pair("name", name);
            }
            if let Some(status) = filter.status {
                q.append_pair("status", status.as_str());
            }
        }
        if url.query() == Some("") {
            url.set_query(None);
        }
        let text = self
            .send("GET", &url, None, "")?
            .ok_or_else(|| Error::Protocol("empty response".into()))?;
        let list: PinList =
            serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("bad pin list: {e}")))?;
        Ok(list.results)
    }

    /// Polls `status` until the record reaches a terminal state.
    pub fn wait(&self, request_id: &str, max_polls: usize, interval: Duration) -> Result<RemotePinRecord> {
        let mut record = self.status(request_id)?;
        for _ in 1..max_polls {
            if record.status.is_terminal() {
                break;
            }
            std::thread::sleep(interval);
            record = self.status(request_id)?;
        }
        Ok(record)
    }
}
