//! Forwarding proxy that records every exchange, byte-exact, into
//! per-account session traces.

pub mod trace;

use std::collections::BTreeMap;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{
    query_param, serve, HttpRequest, HttpResponse, HttpTransport, ServerHandle, Transport, TransportError,
};
use crate::puppet::HEADER_CLIENT_TS;
use crate::wire::paths;
use crate::wire::sign::{HEADER_ACCOUNT_ID, HEADER_DEVICE_ID};

pub use trace::{read_trace, write_trace, TraceWriter};

/// Session name for requests without an account header (registration).
pub const ANONYMOUS_SESSION: &str = "anonymous";
pub const TRACE_EXTENSION: &str = "fltrace";

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace format: {0}")]
    Format(String),
    #[error("account {0} not found in session log")]
    UnknownAccount(String),
    #[error("upstream {0} unreachable")]
    Unreachable(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub sequence_no: u64,
    pub timestamp_ms: u64,
    pub method: String,
    pub path: String,
    pub request_headers: Vec<(String, String)>,
    pub request_body: Vec<u8>,
    pub response_status: u16,
    pub response_body: Vec<u8>,
}

impl RecordedExchange {
    pub fn request(&self) -> HttpRequest {
        HttpRequest {
            method: self.method.clone(),
            path: self.path.clone(),
            headers: self.request_headers.clone(),
            body: self.request_body.clone(),
        }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.request_headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn route(&self) -> &str {
        paths::route(&self.path)
    }
}

/// The FYP-signal subset of one account's session: what cloning replays.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignalTrace {
    pub account_id: String,
    pub device_id: String,
    pub exchanges: Vec<RecordedExchange>,
}

impl SignalTrace {
    pub fn save(&self, path: &Path) -> Result<(), ProxyError> {
        write_trace(path, &self.exchanges)
    }

    /// Loads a trace file; identities come from the recorded headers.
    pub fn load(path: &Path) -> Result<Self, ProxyError> {
        let exchanges = read_trace(path)?;
        let first = exchanges.first();
        let get = |name| first.and_then(|x| x.header(name)).unwrap_or_default().to_string();
        Ok(Self { account_id: get(HEADER_ACCOUNT_ID), device_id: get(HEADER_DEVICE_ID), exchanges })
    }
}

/// True for feed-shaping signal exchanges: scroll feed, stats, feedback and
/// app-log posts that did not originate from search.
pub fn is_fyp_signal(x: &RecordedExchange) -> bool {
    let signal_route = matches!(x.route(), paths::FEED | paths::STATS | paths::FEEDBACK | paths::APP_LOG);
    x.method == "POST" && signal_route && query_param(&x.path, "origin").as_deref() != Some("search")
}

/// Keeps the successful FYP-signal exchanges sent by `account_id`.
pub fn extract_trace(log: &[RecordedExchange], account_id: &str) -> Result<SignalTrace, ProxyError> {
    let own: Vec<&RecordedExchange> = log.iter().filter(|x| x.header(HEADER_ACCOUNT_ID) == Some(account_id)).collect();
    if own.is_empty() {
        return Err(ProxyError::UnknownAccount(account_id.to_string()));
    }
    let device_id = own[0].header(HEADER_DEVICE_ID).unwrap_or_default().to_string();
    let mut exchanges: Vec<RecordedExchange> =
        own.into_iter().filter(|x| is_fyp_signal(x) && (200..300).contains(&x.response_status)).cloned().collect();
    exchanges.sort_by_key(|x| x.sequence_no);
    Ok(SignalTrace { account_id: account_id.to_string(), device_id, exchanges })
}

struct Session {
    next_seq: u64,
    exchanges: Vec<RecordedExchange>,
    writer: Option<TraceWriter>,
}

/// Records exchanges per session (the `X-FL-Account-Id` header) and
/// forwards them unchanged. Requests of one session are serialized, so
/// sequence numbers follow the order the upstream saw them in.
pub struct RecordingProxy<T> {
    upstream: T,
    trace_dir: Option<PathBuf>,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
}

fn safe_file_stem(session: &str) -> String {
    session.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

impl<T: Transport> RecordingProxy<T> {
    pub fn new(upstream: T) -> Self {
        Self { upstream, trace_dir: None, sessions: Mutex::new(BTreeMap::new()) }
    }

    /// Also appends every session to `<dir>/<session>.fltrace`.
    pub fn with_trace_dir(upstream: T, dir: &Path) -> Result<Self, ProxyError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { upstream, trace_dir: Some(dir.to_path_buf()), sessions: Mutex::new(BTreeMap::new()) })
    }

    pub fn upstream(&self) -> &T {
        &self.upstream
    }

    fn session(&self, key: &str) -> Result<Arc<Mutex<Session>>, ProxyError> {
        let mut sessions = self.sessions.lock().expect("session table poisoned");
        if let Some(s) = sessions.get(key) {
            return Ok(Arc::clone(s));
        }
        let writer = match &self.trace_dir {
            Some(dir) => Some(TraceWriter::create(&self.trace_path(dir, key))?),
            None => None,
        };
        let s = Arc::new(Mutex::new(Session { next_seq: 1, exchanges: Vec::new(), writer }));
        sessions.insert(key.to_string(), Arc::clone(&s));
        Ok(s)
    }

    fn trace_path(&self, dir: &Path, session: &str) -> PathBuf {
        dir.join(format!("{}.{TRACE_EXTENSION}", safe_file_stem(session)))
    }

    /// Opens a session ahead of traffic so an idle session still leaves an
    /// (empty, valid) trace file.
    pub fn open_session(&self, account_id: &str) -> Result<(), ProxyError> {
        self.session(account_id).map(drop)
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.lock().expect("session table poisoned").keys().cloned().collect()
    }

    /// Everything recorded for one session so far.
    pub fn exchanges(&self, account_id: &str) -> Vec<RecordedExchange> {
        let s = self.sessions.lock().expect("session table poisoned").get(account_id).cloned();
        s.map(|s| s.lock().expect("session poisoned").exchanges.clone()).unwrap_or_default()
    }

    pub fn extract(&self, account_id: &str) -> Result<SignalTrace, ProxyError> {
        extract_trace(&self.exchanges(account_id), account_id)
    }
}

fn timestamp(req: &HttpRequest) -> u64 {
    req.header(HEADER_CLIENT_TS).and_then(|v| v.parse().ok()).unwrap_or_else(|| {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or_default()
    })
}

impl<T: Transport> Transport for RecordingProxy<T> {
    fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
        let key = request.header(HEADER_ACCOUNT_ID).unwrap_or(ANONYMOUS_SESSION).to_string();
        let session = self.session(&key).map_err(|e| TransportError::Io(e.to_string()))?;
        let mut session = session.lock().expect("session poisoned");
        let mut record = RecordedExchange {
            sequence_no: session.next_seq,
            timestamp_ms: timestamp(&request),
            method: request.method.clone(),
            path: request.path.clone(),
            request_headers: request.headers.clone(),
            request_body: request.body.clone(),
            ..Default::default()
        };
        let response = self.upstream.send(request)?;
        record.response_status = response.status;
        record.response_body = response.body.clone();
        if let Some(w) = session.writer.as_mut() {
            w.append(&record).map_err(|e| TransportError::Io(e.to_string()))?;
        }
        session.next_seq += 1;
        session.exchanges.push(record);
        Ok(response)
    }
}

fn upstream_addr(url: &str) -> Option<String> {
    let rest = url.strip_prefix("http://").unwrap_or(url);
    let authority = rest.split('/').next()?;
    Some(if authority.contains(':') { authority.to_string() } else { format!("{authority}:80") })
}

/// Binds `listen` and forwards to `upstream_url`, writing traces under
/// `trace_dir`. Fails if the upstream does not accept connections.
pub fn start_proxy(listen: &str, upstream_url: &str, trace_dir: &Path) -> Result<ServerHandle, ProxyError> {
    let addr = upstream_addr(upstream_url).ok_or_else(|| ProxyError::Unreachable(upstream_url.to_string()))?;
    let reachable = addr
        .to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .is_some_and(|a| TcpStream::connect_timeout(&a, Duration::from_secs(3)).is_ok());
    if !reachable {
        return Err(ProxyError::Unreachable(upstream_url.to_string()));
    }
    let proxy = RecordingProxy::with_trace_dir(HttpTransport::new(upstream_url), trace_dir)?;
    Ok(serve(listen, Arc::new(proxy), 8)?)
}
