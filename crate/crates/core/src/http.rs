//! Minimal HTTP message model and transports.
//!
//! Every component talks through [`Transport`]: the platform handles
//! requests in-process, the recording proxy wraps another transport, and
//! [`HttpTransport`] / [`serve`] move the same messages over real sockets.

use std::io::Read;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    /// Path including the query string.
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn new(method: &str, path: &str, body: Vec<u8>) -> Self {
        Self { method: method.to_string(), path: path.to_string(), headers: Vec::new(), body }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    /// Replaces the first header with this name (keeping its position) or
    /// appends a new one.
    pub fn set_header(&mut self, name: &str, value: &str) {
        match self.headers.iter_mut().find(|(k, _)| k.eq_ignore_ascii_case(name)) {
            Some(slot) => slot.1 = value.to_string(),
            None => self.headers.push((name.to_string(), value.to_string())),
        }
    }

    pub fn route(&self) -> &str {
        crate::wire::paths::route(&self.path)
    }

    pub fn query(&self, key: &str) -> Option<String> {
        query_param(&self.path, key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn ok(body: Vec<u8>) -> Self {
        Self { status: 200, body }
    }

    pub fn error(status: u16, message: impl Into<String>) -> Self {
        Self { status, body: message.into().into_bytes() }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("upstream unreachable: {0}")]
    Unreachable(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
        (**self).send(request)
    }
}

impl<T: Transport + ?Sized> Transport for &T {
    fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
        (**self).send(request)
    }
}

/// Percent-encodes a query component (RFC 3986 unreserved set kept).
pub fn encode_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

fn decode_component(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' if i + 2 < bytes.len() => {
                let hex = std::str::from_utf8(&bytes[i + 1..i + 3]).ok();
                match hex.and_then(|h| u8::from_str_radix(h, 16).ok()) {
                    Some(v) => {
                        out.push(v);
                        i += 3;
                        continue;
                    }
                    None => out.push(b'%'),
                }
            }
            b'+' => out.push(b' '),
            b => out.push(b),
        }
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

pub fn query_param(path: &str, key: &str) -> Option<String> {
    let (_, query) = path.split_once('?')?;
    query.split('&').find_map(|pair| {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        (decode_component(k) == key).then(|| decode_component(v))
    })
}

pub fn build_path(route: &str, params: &[(&str, String)]) -> String {
    if params.is_empty() {
        return route.to_string();
    }
    let query: Vec<String> =
        params.iter().map(|(k, v)| format!("{}={}", encode_component(k), encode_component(v))).collect();
    format!("{route}?{}", query.join("&"))
}

/// Blocking HTTP/1.1 client transport.
/// Set by the HTTP layer itself; never part of a recorded or replayed request.
const TRANSPORT_HEADERS: [&str; 8] =
    ["host", "content-length", "transfer-encoding", "connection", "accept", "accept-encoding", "user-agent", "expect"];

fn is_transport_header(name: &str) -> bool {
    TRANSPORT_HEADERS.iter().any(|h| h.eq_ignore_ascii_case(name))
}

pub struct HttpTransport {
    base: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build();
        Self { base: base_url.trim_end_matches('/').to_string(), agent }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
        let url = format!("{}{}", self.base, request.path);
        let mut call = self.agent.request(&request.method, &url);
        for (k, v) in request.headers.iter().filter(|(k, _)| !is_transport_header(k)) {
            call = call.set(k, v);
        }
        let result = if request.method == "GET" && request.body.is_empty() {
            call.call()
        } else {
            call.send_bytes(&request.body)
        };
        let response = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(ureq::Error::Transport(t)) => return Err(TransportError::Unreachable(t.to_string())),
        };
        let status = response.status();
        let mut body = Vec::new();
        response.into_reader().read_to_end(&mut body).map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Handle to a background HTTP server; dropping it stops the server.
pub struct ServerHandle {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.unblock();
        for _ in 1..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if !self.workers.is_empty() {
            self.stop_workers();
        }
    }
}

/// Serves `handler` on `listen` with a small worker pool. Requests from
/// distinct connections are handled concurrently.
pub fn serve<H: Transport + 'static>(listen: &str, handler: Arc<H>, workers: usize) -> std::io::Result<ServerHandle> {
    let server = tiny_http::Server::http(listen).map_err(|e| std::io::Error::new(std::io::ErrorKind::AddrInUse, e))?;
    let addr = server.server_addr().to_ip().ok_or_else(|| std::io::Error::other("not an ip listener"))?;
    let server = Arc::new(server);
    let stop = Arc::new(AtomicBool::new(false));
    let workers = (0..workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let handler = Arc::clone(&handler);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    let mut incoming = match server.recv() {
                        Ok(r) => r,
                        Err(_) => break,
                    };
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let mut body = Vec::new();
                    if incoming.as_reader().read_to_end(&mut body).is_err() {
                        let _ = incoming.respond(tiny_http::Response::from_string("bad body").with_status_code(400));
                        continue;
                    }
                    let request = HttpRequest {
                        method: incoming.method().as_str().to_string(),
                        path: incoming.url().to_string(),
                        headers: incoming
                            .headers()
                            .iter()
                            .filter(|h| !is_transport_header(h.field.as_str().as_str()))
                            .map(|h| (h.field.as_str().as_str().to_string(), h.value.as_str().to_string()))
                            .collect(),
                        body,
                    };
                    let response = match handler.send(request) {
                        Ok(r) => r,
                        Err(e) => HttpResponse::error(502, e.to_string()),
                    };
                    let out = tiny_http::Response::from_data(response.body).with_status_code(response.status);
                    let _ = incoming.respond(out);
                }
            })
        })
        .collect();
    Ok(ServerHandle { addr, server, stop, workers })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl Transport for Echo {
        fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
            let status = if request.header("x-fail").is_some() { 418 } else { 200 };
            let mut body = format!("{} {} ", request.method, request.path).into_bytes();
            body.extend(request.body);
            Ok(HttpResponse { status, body })
        }
    }

    #[test]
    fn query_round_trip() {
        let path = build_path("/s", &[("keyword", "sports betting,parlay".into()), ("count", "25".into())]);
        assert_eq!(path, "/s?keyword=sports%20betting%2Cparlay&count=25");
        assert_eq!(query_param(&path, "keyword").as_deref(), Some("sports betting,parlay"));
        assert_eq!(query_param(&path, "count").as_deref(), Some("25"));
        assert_eq!(query_param(&path, "missing"), None);
        assert_eq!(query_param("/s?a=%zz", "a").as_deref(), Some("%zz"));
    }

    #[test]
    fn headers_are_case_insensitive_and_replaced_in_place() {
        let mut r = HttpRequest::new("GET", "/", vec![]);
        r.set_header("X-A", "1");
        r.set_header("X-B", "2");
        r.set_header("x-a", "3");
        assert_eq!(r.headers, vec![("X-A".to_string(), "3".to_string()), ("X-B".to_string(), "2".to_string())]);
        assert_eq!(r.header("x-b"), Some("2"));
    }

    #[test]
    fn serves_over_tcp() {
        let handle = serve("127.0.0.1:0", Arc::new(Echo), 2).unwrap();
        let client = HttpTransport::new(&handle.url());
        let resp = client.send(HttpRequest::new("POST", "/x?y=1", b"payload".to_vec())).unwrap();
        assert_eq!(resp.status, 200);
        assert_eq!(resp.text(), "POST /x?y=1 payload");
        let mut failing = HttpRequest::new("GET", "/z", vec![]);
        failing.set_header("X-Fail", "1");
        assert_eq!(client.send(failing).unwrap().status, 418);
        handle.shutdown();
    }

    struct HeaderNames;

    impl Transport for HeaderNames {
        fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
            let names: Vec<String> = request.headers.iter().map(|(k, _)| k.to_ascii_lowercase()).collect();
            Ok(HttpResponse::ok(format!("{} {}", names.join(","), request.body.len()).into_bytes()))
        }
    }

    #[test]
    fn stale_transport_headers_are_dropped() {
        let handle = serve("127.0.0.1:0", Arc::new(HeaderNames), 1).unwrap();
        let client = HttpTransport::new(&handle.url());
        let mut req = HttpRequest::new("POST", "/", b"payload".to_vec());
        req.set_header("Content-Length", "3");
        req.set_header("Host", "elsewhere");
        req.set_header("X-Fl-Account-Id", "u1");
        assert_eq!(client.send(req).unwrap().text(), "x-fl-account-id 7");
        handle.shutdown();
    }

    #[test]
    fn unreachable_upstream_is_reported() {
        let client = HttpTransport::new("http://127.0.0.1:1");
        assert!(matches!(client.send(HttpRequest::new("GET", "/", vec![])), Err(TransportError::Unreachable(_))));
    }
}
