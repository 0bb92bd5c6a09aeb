use crate::http::{build_path, HttpRequest, HttpResponse, Transport};
use crate::platform::Registration;
use crate::wire::sign::{HEADER_ACCOUNT_ID, HEADER_DEVICE_ID};
use crate::wire::{
    compress_payload, paths, sign_in_place, AppLogBatch, AppLogEvent, Dictionary, Envelope, FeedPage, FeedRequestBody,
    FeedbackBody, FeedbackItem, PublicVideo, StatsBody, WatchReport, WireMessage, CONTENT_TYPE_APP_LOG,
    CONTENT_TYPE_PROTOBUF,
};

use super::PuppetError;

/// Start of every agent's simulated clock (2025-03-17T00:00:00Z).
pub const SIM_EPOCH_MS: u64 = 1_742_169_600_000;

/// Header carrying the client's simulated clock; the recorder uses it as
/// the exchange timestamp.
pub const HEADER_CLIENT_TS: &str = "x-fl-ts";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Fyp,
    Search,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Fyp => "fyp",
            Origin::Search => "search",
        }
    }
}

/// One account's signed session against a platform transport.
pub struct Client<T> {
    transport: T,
    creds: Registration,
    dictionary: Dictionary,
    nonce: u64,
    clock_ms: u64,
}

impl<T: Transport> Client<T> {
    pub fn new(transport: T, creds: Registration, dictionary: Dictionary) -> Self {
        Self { transport, creds, dictionary, nonce: 0, clock_ms: SIM_EPOCH_MS }
    }

    /// Creates an account through the (unsigned) registration endpoint.
    pub fn register(transport: T, dictionary: Dictionary) -> Result<Self, PuppetError> {
        let response = transport
            .send(HttpRequest::new("POST", paths::REGISTER, Vec::new()))
            .map_err(|e| PuppetError::Transport(e.to_string()))?;
        let response = check(paths::REGISTER, response)?;
        let creds = Registration::from_json(&response.body).map_err(|e| PuppetError::Protocol(e.to_string()))?;
        Ok(Self::new(transport, creds, dictionary))
    }

    pub fn credentials(&self) -> &Registration {
        &self.creds
    }

    pub fn account_id(&self) -> &str {
        &self.creds.account_id
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn nonce(&self) -> u64 {
        self.nonce
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    /// Continues after traffic sent on this account's behalf by someone
    /// else (a replay).
    pub fn resume_after(&mut self, last_nonce: u64, last_clock_ms: u64) {
        self.nonce = self.nonce.max(last_nonce);
        self.clock_ms = self.clock_ms.max(last_clock_ms);
    }

    pub fn advance_clock(&mut self, ms: u64) {
        self.clock_ms += ms;
    }

    fn envelope(&mut self) -> Envelope {
        self.nonce += 1;
        Envelope {
            account_id: self.creds.account_id.clone(),
            device_id: self.creds.device_id.clone(),
            session_nonce: self.nonce,
            client_timestamp_ms: self.clock_ms,
        }
    }

    pub fn event(&self, name: &str, video_id: &str, dwell_ms: u64) -> AppLogEvent {
        AppLogEvent {
            event: name.to_string(),
            account_id: self.creds.account_id.clone(),
            video_id: video_id.to_string(),
            dwell_ms,
        }
    }

    fn request(&self, method: &str, path: &str, body: Vec<u8>, content_type: &str) -> HttpRequest {
        let mut req = HttpRequest::new(method, path, body);
        req.set_header("Content-Type", content_type);
        req.set_header(HEADER_ACCOUNT_ID, &self.creds.account_id);
        req.set_header(HEADER_DEVICE_ID, &self.creds.device_id);
        req.set_header(HEADER_CLIENT_TS, &self.clock_ms.to_string());
        sign_in_place(&mut req, &self.creds.key).expect("key present");
        req
    }

    fn call(&self, req: HttpRequest) -> Result<HttpResponse, PuppetError> {
        let route = req.route().to_string();
        let response = self.transport.send(req).map_err(|e| PuppetError::Transport(e.to_string()))?;
        check(&route, response)
    }

    fn post<M: WireMessage>(&self, route: &str, origin: Option<Origin>, msg: &M) -> Result<HttpResponse, PuppetError> {
        let body = msg.encode().map_err(|e| PuppetError::Protocol(e.to_string()))?;
        let path = match origin {
            Some(o) => build_path(route, &[("origin", o.as_str().to_string())]),
            None => route.to_string(),
        };
        self.call(self.request("POST", &path, body, CONTENT_TYPE_PROTOBUF))
    }

    fn page(response: HttpResponse) -> Result<FeedPage, PuppetError> {
        FeedPage::decode(&response.body).map_err(|e| PuppetError::Protocol(e.to_string()))
    }

    /// Scroll-mode page; `acks` reports the previous page's impressions.
    pub fn scroll_page(&mut self, count: u32, acks: Vec<WatchReport>) -> Result<FeedPage, PuppetError> {
        let body = FeedRequestBody { envelope: self.envelope(), watch_reports: acks, count };
        Self::page(self.post(paths::FEED, Some(Origin::Fyp), &body)?)
    }

    /// Read-only preview page.
    pub fn fetch_page(&self, count: u32, cursor: u64) -> Result<FeedPage, PuppetError> {
        let path = build_path(paths::FETCH_FEED, &[("count", count.to_string()), ("cursor", cursor.to_string())]);
        Self::page(self.call(self.request("GET", &path, Vec::new(), CONTENT_TYPE_PROTOBUF))?)
    }

    /// `n` fetch-mode videos in pages of at most `page_size`.
    pub fn fetch(&self, n: usize, page_size: u32) -> Result<Vec<PublicVideo>, PuppetError> {
        let mut out = Vec::with_capacity(n);
        let mut cursor = 0;
        while out.len() < n {
            let want = (n - out.len()).min(page_size.max(1) as usize) as u32;
            let page = self.fetch_page(want, cursor)?;
            if page.videos.is_empty() {
                break;
            }
            out.extend(page.videos);
            cursor += 1;
        }
        Ok(out)
    }

    pub fn search(&self, keywords: &[String], count: u32) -> Result<FeedPage, PuppetError> {
        let path = build_path(paths::SEARCH, &[("keyword", keywords.join(",")), ("count", count.to_string())]);
        Self::page(self.call(self.request("GET", &path, Vec::new(), CONTENT_TYPE_PROTOBUF))?)
    }

    pub fn send_stats(&mut self, reports: Vec<WatchReport>, origin: Origin) -> Result<(), PuppetError> {
        let body = StatsBody { envelope: self.envelope(), reports };
        self.post(paths::STATS, Some(origin), &body).map(drop)
    }

    pub fn send_feedback(&mut self, items: Vec<FeedbackItem>, origin: Origin) -> Result<(), PuppetError> {
        let body = FeedbackBody { envelope: self.envelope(), items };
        self.post(paths::FEEDBACK, Some(origin), &body).map(drop)
    }

    pub fn send_app_log(&mut self, events: Vec<AppLogEvent>, origin: Origin) -> Result<(), PuppetError> {
        let body = AppLogBatch { envelope: self.envelope(), events };
        let plain = body.encode().map_err(|e| PuppetError::Protocol(e.to_string()))?;
        let path = build_path(paths::APP_LOG, &[("origin", origin.as_str().to_string())]);
        let req = self.request("POST", &path, compress_payload(&plain, &self.dictionary), CONTENT_TYPE_APP_LOG);
        self.call(req).map(drop)
    }
}

fn check(route: &str, response: HttpResponse) -> Result<HttpResponse, PuppetError> {
    if response.is_success() {
        Ok(response)
    } else {
        Err(PuppetError::Rejected { path: route.to_string(), status: response.status, message: response.text() })
    }
}
