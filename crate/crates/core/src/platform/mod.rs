//! Simulated short-video platform: corpus, per-account personalization and
//! the signed feed/signal endpoints.

pub mod calibration;
pub mod corpus;
pub mod feed;
pub mod state;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{HttpRequest, HttpResponse, Transport, TransportError};
use crate::wire::sign::{HEADER_ACCOUNT_ID, HEADER_DEVICE_ID, HEADER_KEY_ID};
use crate::wire::{
    decompress_payload, paths, verify_request, Ack, AppLogBatch, AppLogEvent, Dictionary, Envelope, FeedPage,
    FeedRequestBody, FeedbackBody, FeedbackKind, SigningKey, StatsBody, WatchReport, WireMessage,
};

pub use calibration::Calibration;
pub use corpus::{generate_corpus, Corpus, Video};
pub use feed::Sampling;
pub use state::{apply_signal, delivery_probability, AccountState, SignalKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlatformError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("authentication: {0}")]
    Auth(String),
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("unknown video {0}")]
    UnknownVideo(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("nonce {got} not above last accepted nonce {last}")]
    StaleNonce { last: u64, got: u64 },
}

impl PlatformError {
    pub fn status(&self) -> u16 {
        match self {
            PlatformError::Config(_) => 500,
            PlatformError::Auth(_) | PlatformError::UnknownAccount(_) => 401,
            PlatformError::UnknownVideo(_) | PlatformError::Protocol(_) => 400,
            PlatformError::StaleNonce { .. } => 409,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedMode {
    /// Marks served videos as seen.
    Scroll,
    /// Read-only preview of what the feed would serve.
    Fetch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    pub seed: u64,
    pub calibration: Calibration,
    pub sampling: Sampling,
    /// Largest page a single request may ask for.
    pub max_page: u32,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self { seed: 0, calibration: Calibration::default(), sampling: Sampling::default(), max_page: 500 }
    }
}

/// Credentials issued by the registration endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registration {
    pub account_id: String,
    pub device_id: String,
    pub key: SigningKey,
}

#[derive(Serialize, Deserialize)]
struct RegistrationJson {
    account_id: String,
    device_id: String,
    key_id: String,
    secret: String,
}

impl Registration {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(&RegistrationJson {
            account_id: self.account_id.clone(),
            device_id: self.device_id.clone(),
            key_id: self.key.key_id.clone(),
            secret: hex::encode(self.key.secret),
        })
        .expect("plain struct serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, PlatformError> {
        let bad = |m: String| PlatformError::Protocol(format!("registration response: {m}"));
        let j: RegistrationJson = serde_json::from_slice(bytes).map_err(|e| bad(e.to_string()))?;
        let secret: [u8; 32] = hex::decode(&j.secret)
            .map_err(|e| bad(e.to_string()))?
            .try_into()
            .map_err(|_| bad("secret must be 32 bytes".into()))?;
        Ok(Self { account_id: j.account_id, device_id: j.device_id, key: SigningKey::new(j.key_id, secret) })
    }
}

struct Account {
    state: AccountState,
    app_log: Vec<AppLogEvent>,
}

pub struct Platform {
    config: PlatformConfig,
    corpus: Arc<Corpus>,
    dictionary: Dictionary,
    accounts: RwLock<HashMap<String, Arc<Mutex<Account>>>>,
    keys: RwLock<HashMap<String, (String, SigningKey)>>,
    registered: AtomicU64,
    search_cache: Mutex<HashMap<Vec<String>, Arc<Vec<usize>>>>,
}

fn derive(tag: &str, seed: u64, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u32).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

impl Platform {
    pub fn new(corpus: Arc<Corpus>, config: PlatformConfig, dictionary: Dictionary) -> Result<Self, PlatformError> {
        config.calibration.validate()?;
        if config.max_page == 0 {
            return Err(PlatformError::Config("max_page must be >= 1".into()));
        }
        Ok(Self {
            config,
            corpus,
            dictionary,
            accounts: RwLock::new(HashMap::new()),
            keys: RwLock::new(HashMap::new()),
            registered: AtomicU64::new(0),
            search_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    /// Creates an account with fresh ids and a signing key. Ids derive from
    /// the platform seed and the registration counter.
    pub fn register(&self) -> Registration {
        let n = self.registered.fetch_add(1, Ordering::SeqCst);
        let ids = derive("register", self.config.seed, &[&n.to_le_bytes()]);
        let secret = derive("secret", self.config.seed, &[&n.to_le_bytes()]);
        let reg = Registration {
            account_id: format!("u{}", hex::encode(&ids[0..8])),
            device_id: format!("d{}", hex::encode(&ids[8..16])),
            key: SigningKey::new(format!("k{}", hex::encode(&ids[16..24])), secret),
        };
        let topics = self.corpus.topics().iter().map(|t| t.topic_id.as_str());
        let account =
            Account { state: AccountState::new(&reg.account_id, &reg.device_id, topics), app_log: Vec::new() };
        self.keys
            .write()
            .expect("key table poisoned")
            .insert(reg.key.key_id.clone(), (reg.account_id.clone(), reg.key.clone()));
        self.accounts
            .write()
            .expect("account table poisoned")
            .insert(reg.account_id.clone(), Arc::new(Mutex::new(account)));
        reg
    }

    fn account(&self, account_id: &str) -> Result<Arc<Mutex<Account>>, PlatformError> {
        self.accounts
            .read()
            .expect("account table poisoned")
            .get(account_id)
            .cloned()
            .ok_or_else(|| PlatformError::UnknownAccount(account_id.to_string()))
    }

    pub fn account_state(&self, account_id: &str) -> Option<AccountState> {
        let acc = self.account(account_id).ok()?;
        let state = acc.lock().expect("account poisoned").state.clone();
        Some(state)
    }

    pub fn state_digest(&self, account_id: &str) -> Option<[u8; 32]> {
        self.account_state(account_id).map(|s| s.digest())
    }

    pub fn app_log_events(&self, account_id: &str) -> Vec<AppLogEvent> {
        self.account(account_id).map(|a| a.lock().expect("account poisoned").app_log.clone()).unwrap_or_default()
    }

    pub fn delivery_probabilities(&self, state: &AccountState) -> Vec<f64> {
        self.corpus
            .topics()
            .iter()
            .map(|t| delivery_probability(state, &t.topic_id, t.base_prevalence, &self.config.calibration))
            .collect()
    }

    fn page_from(&self, indices: &[usize], page_token: String) -> FeedPage {
        FeedPage { videos: indices.iter().map(|&i| self.corpus.videos()[i].public()).collect(), page_token }
    }

    /// Serves `count` videos. Scroll mode marks them seen; fetch mode leaves
    /// the account state untouched.
    pub fn serve_feed<R: Rng>(
        &self,
        account_id: &str,
        count: u32,
        mode: FeedMode,
        rng: &mut R,
    ) -> Result<FeedPage, PlatformError> {
        let acc = self.account(account_id)?;
        let mut acc = acc.lock().expect("account poisoned");
        Ok(self.serve_locked(&mut acc, count, mode, rng, String::new()))
    }

    fn serve_locked<R: Rng>(
        &self,
        acc: &mut Account,
        count: u32,
        mode: FeedMode,
        rng: &mut R,
        page_token: String,
    ) -> FeedPage {
        let probs = self.delivery_probabilities(&acc.state);
        let picked =
            feed::fill_page(&self.corpus, &probs, count as usize, &acc.state.seen_video_ids, self.config.sampling, rng);
        if mode == FeedMode::Scroll {
            for &i in &picked {
                acc.state.seen_video_ids.insert(self.corpus.videos()[i].video_id.clone());
            }
        }
        self.page_from(&picked, page_token)
    }

    fn classify_watch(&self, report: &WatchReport) -> Result<(&Video, SignalKind), PlatformError> {
        let video =
            self.corpus.get(&report.video_id).ok_or_else(|| PlatformError::UnknownVideo(report.video_id.clone()))?;
        let kind = if report.finished {
            if report.watch_duration_ms < video.duration_ms {
                return Err(PlatformError::Protocol(format!(
                    "{}: finished with watch_duration {} < duration {}",
                    video.video_id, report.watch_duration_ms, video.duration_ms
                )));
            }
            SignalKind::WatchFull
        } else if report.watch_duration_ms <= self.config.calibration.skip_threshold_ms {
            SignalKind::Skip
        } else {
            SignalKind::WatchPartial
        };
        Ok((video, kind))
    }

    fn apply(&self, state: &mut AccountState, video: &Video, kind: SignalKind) {
        apply_signal(state, video.true_topics.iter().map(String::as_str), kind, &self.config.calibration);
    }

    pub fn record_watch(&self, account_id: &str, report: &WatchReport) -> Result<SignalKind, PlatformError> {
        let acc = self.account(account_id)?;
        let mut acc = acc.lock().expect("account poisoned");
        let (video, kind) = self.classify_watch(report)?;
        self.apply(&mut acc.state, video, kind);
        Ok(kind)
    }

    pub fn record_not_interested(&self, account_id: &str, video_id: &str) -> Result<(), PlatformError> {
        let acc = self.account(account_id)?;
        let mut acc = acc.lock().expect("account poisoned");
        let video = self.corpus.get(video_id).ok_or_else(|| PlatformError::UnknownVideo(video_id.to_string()))?;
        self.apply(&mut acc.state, video, SignalKind::NotInterested);
        Ok(())
    }

    /// Keyword search. Does not touch any account state.
    pub fn search_feed(&self, keywords: &[String], count: u32) -> Result<FeedPage, PlatformError> {
        let keywords: Vec<String> = keywords.iter().map(|k| k.trim().to_string()).filter(|k| !k.is_empty()).collect();
        if keywords.is_empty() {
            return Err(PlatformError::Protocol("empty search query".into()));
        }
        let hits = {
            let mut cache = self.search_cache.lock().expect("search cache poisoned");
            match cache.get(&keywords) {
                Some(h) => Arc::clone(h),
                None => {
                    let h = Arc::new(self.corpus.search(&keywords, self.config.max_page as usize));
                    cache.insert(keywords.clone(), Arc::clone(&h));
                    h
                }
            }
        };
        let n = (count as usize).min(hits.len());
        Ok(self.page_from(&hits[..n], String::new()))
    }

    fn request_rng(&self, tag: &str, account_id: &str, counter: u64) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(derive(tag, self.config.seed, &[account_id.as_bytes(), &counter.to_le_bytes()]))
    }

    /// Full request handling: signature, identity and nonce checks, then
    /// dispatch.
    pub fn handle(&self, req: &HttpRequest) -> HttpResponse {
        match self.dispatch(req) {
            Ok(body) => HttpResponse::ok(body),
            Err(e) => HttpResponse::error(e.status(), e.to_string()),
        }
    }

    fn authenticate(&self, req: &HttpRequest) -> Result<Arc<Mutex<Account>>, PlatformError> {
        let account_id =
            req.header(HEADER_ACCOUNT_ID).ok_or_else(|| PlatformError::Auth(format!("missing {HEADER_ACCOUNT_ID}")))?;
        let keys = self.keys.read().expect("key table poisoned");
        verify_request(req, |id| keys.get(id).map(|(_, k)| k.clone()))
            .map_err(|r| PlatformError::Auth(r.to_string()))?;
        let key_id = req.header(HEADER_KEY_ID).unwrap_or_default();
        let owner = keys.get(key_id).map(|(a, _)| a.as_str()).unwrap_or_default();
        if owner != account_id {
            return Err(PlatformError::Auth(format!("key {key_id} does not belong to {account_id}")));
        }
        drop(keys);
        let acc = self.account(account_id)?;
        let device = req.header(HEADER_DEVICE_ID).unwrap_or_default();
        if acc.lock().expect("account poisoned").state.device_id != device {
            return Err(PlatformError::Auth(format!("device {device:?} not bound to {account_id}")));
        }
        Ok(acc)
    }

    fn check_envelope(acc: &Account, env: &Envelope) -> Result<(), PlatformError> {
        if env.account_id != acc.state.account_id || env.device_id != acc.state.device_id {
            return Err(PlatformError::Auth("body identity does not match request headers".into()));
        }
        if env.session_nonce <= acc.state.last_nonce {
            return Err(PlatformError::StaleNonce { last: acc.state.last_nonce, got: env.session_nonce });
        }
        Ok(())
    }

    fn decode<M: WireMessage>(bytes: &[u8]) -> Result<M, PlatformError> {
        M::decode(bytes).map_err(|e| PlatformError::Protocol(e.to_string()))
    }

    fn encode<M: WireMessage>(msg: &M) -> Result<Vec<u8>, PlatformError> {
        msg.encode().map_err(|e| PlatformError::Protocol(e.to_string()))
    }

    fn page_count(&self, raw: Option<String>, default: u32) -> Result<u32, PlatformError> {
        let count = match raw {
            Some(s) => s.parse::<u32>().map_err(|_| PlatformError::Protocol(format!("bad count {s:?}")))?,
            None => default,
        };
        if count == 0 || count > self.config.max_page {
            return Err(PlatformError::Protocol(format!("count {count} not in 1..={}", self.config.max_page)));
        }
        Ok(count)
    }

    fn dispatch(&self, req: &HttpRequest) -> Result<Vec<u8>, PlatformError> {
        let route = req.route();
        if route == paths::REGISTER {
            if req.method != "POST" {
                return Err(PlatformError::Protocol("register requires POST".into()));
            }
            return Ok(self.register().to_json());
        }
        let known = [paths::FEED, paths::FETCH_FEED, paths::STATS, paths::FEEDBACK, paths::APP_LOG, paths::SEARCH];
        if !known.contains(&route) {
            return Err(PlatformError::Protocol(format!("no such endpoint {route}")));
        }
        let acc = self.authenticate(req)?;
        let expected_method = if route == paths::FETCH_FEED || route == paths::SEARCH { "GET" } else { "POST" };
        if req.method != expected_method {
            return Err(PlatformError::Protocol(format!("{route} requires {expected_method}")));
        }

        match route {
            paths::FEED => {
                let body: FeedRequestBody = Self::decode(&req.body)?;
                let mut acc = acc.lock().expect("account poisoned");
                Self::check_envelope(&acc, &body.envelope)?;
                for r in &body.watch_reports {
                    if self.corpus.get(&r.video_id).is_none() {
                        return Err(PlatformError::UnknownVideo(r.video_id.clone()));
                    }
                }
                let count = self.page_count(Some(body.count.to_string()), 0)?;
                let nonce = body.envelope.session_nonce;
                let mut rng = self.request_rng("scroll", &acc.state.account_id, nonce);
                let page = self.serve_locked(&mut acc, count, FeedMode::Scroll, &mut rng, nonce.to_string());
                acc.state.last_nonce = nonce;
                Self::encode(&page)
            }
            paths::FETCH_FEED => {
                let count = self.page_count(req.query("count"), 20)?;
                let cursor = match req.query("cursor") {
                    Some(c) => c.parse::<u64>().map_err(|_| PlatformError::Protocol(format!("bad cursor {c:?}")))?,
                    None => 0,
                };
                let mut acc = acc.lock().expect("account poisoned");
                let mut rng = self.request_rng("fetch", &acc.state.account_id, cursor);
                let page = self.serve_locked(&mut acc, count, FeedMode::Fetch, &mut rng, (cursor + 1).to_string());
                Self::encode(&page)
            }
            paths::STATS => {
                let body: StatsBody = Self::decode(&req.body)?;
                let mut acc = acc.lock().expect("account poisoned");
                Self::check_envelope(&acc, &body.envelope)?;
                let signals = body.reports.iter().map(|r| self.classify_watch(r)).collect::<Result<Vec<_>, _>>()?;
                for (video, kind) in &signals {
                    self.apply(&mut acc.state, video, *kind);
                }
                acc.state.last_nonce = body.envelope.session_nonce;
                Self::encode(&Ack { applied: signals.len() as u32 })
            }
            paths::FEEDBACK => {
                let body: FeedbackBody = Self::decode(&req.body)?;
                let mut acc = acc.lock().expect("account poisoned");
                Self::check_envelope(&acc, &body.envelope)?;
                let mut marks = Vec::new();
                for item in &body.items {
                    let video = self
                        .corpus
                        .get(&item.video_id)
                        .ok_or_else(|| PlatformError::UnknownVideo(item.video_id.clone()))?;
                    if item.kind == FeedbackKind::NotInterested {
                        marks.push(video);
                    }
                }
                for video in &marks {
                    self.apply(&mut acc.state, video, SignalKind::NotInterested);
                }
                acc.state.last_nonce = body.envelope.session_nonce;
                Self::encode(&Ack { applied: marks.len() as u32 })
            }
            paths::APP_LOG => {
                let plain = decompress_payload(&req.body, &self.dictionary)
                    .map_err(|e| PlatformError::Protocol(format!("app_log: {e}")))?;
                let body: AppLogBatch = Self::decode(&plain)?;
                let mut acc = acc.lock().expect("account poisoned");
                Self::check_envelope(&acc, &body.envelope)?;
                if let Some(e) = body.events.iter().find(|e| e.account_id != acc.state.account_id) {
                    return Err(PlatformError::Auth(format!("app_log event for foreign account {}", e.account_id)));
                }
                let n = body.events.len() as u32;
                acc.app_log.extend(body.events);
                acc.state.last_nonce = body.envelope.session_nonce;
                Self::encode(&Ack { applied: n })
            }
            paths::SEARCH => {
                let query = req.query("keyword").unwrap_or_default();
                let keywords: Vec<String> = query.split(',').map(str::to_string).collect();
                let count = self.page_count(req.query("count"), 25)?;
                Self::encode(&self.search_feed(&keywords, count)?)
            }
            _ => unreachable!("route checked above"),
        }
    }
}

impl Transport for Platform {
    fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
        Ok(self.handle(&request))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::agresti_coull;
    use crate::topics::default_topics;
    use std::sync::OnceLock;

    fn corpus() -> Arc<Corpus> {
        static C: OnceLock<Arc<Corpus>> = OnceLock::new();
        Arc::clone(C.get_or_init(|| Arc::new(generate_corpus(&default_topics(), 50_000, 7).unwrap())))
    }

    fn platform(sampling: Sampling) -> Platform {
        let config = PlatformConfig { seed: 1, sampling, ..PlatformConfig::default() };
        Platform::new(corpus(), config, Dictionary::default_app_log()).unwrap()
    }

    fn on_topic(p: &Platform, page: &FeedPage, topic: &str) -> u64 {
        page.videos.iter().filter(|v| p.corpus().get(&v.video_id).unwrap().true_topics.contains(topic)).count() as u64
    }

    #[test]
    fn fetch_is_read_only() {
        let p = platform(Sampling::Stratified);
        let reg = p.register();
        let before = p.state_digest(&reg.account_id).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            p.serve_feed(&reg.account_id, 200, FeedMode::Fetch, &mut rng).unwrap();
        }
        assert_eq!(p.state_digest(&reg.account_id).unwrap(), before);
        p.serve_feed(&reg.account_id, 10, FeedMode::Scroll, &mut rng).unwrap();
        assert_ne!(p.state_digest(&reg.account_id).unwrap(), before);
    }

    #[test]
    fn scroll_never_repeats() {
        let p = platform(Sampling::Independent);
        let reg = p.register();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..50 {
            for v in p.serve_feed(&reg.account_id, 40, FeedMode::Scroll, &mut rng).unwrap().videos {
                assert!(seen.insert(v.video_id));
            }
        }
    }

    #[test]
    fn unpersonalized_prevalence_matches_base() {
        // Pooled over 100 pages the rate sits within 3 binomial standard
        // errors of the base prevalence; each page within the 99% interval
        // around it.
        for sampling in [Sampling::Stratified, Sampling::Independent] {
            let p = platform(sampling);
            let reg = p.register();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut total = 0u64;
            let mut inside = 0;
            for _ in 0..100 {
                let page = p.serve_feed(&reg.account_id, 200, FeedMode::Fetch, &mut rng).unwrap();
                let x = on_topic(&p, &page, "cooking");
                total += x;
                if agresti_coull(x, 200, 0.99).unwrap().contains(0.085) {
                    inside += 1;
                }
            }
            let n = 20_000.0;
            let se = (0.085f64 * 0.915 / n).sqrt();
            assert!((total as f64 / n - 0.085).abs() < 3.0 * se, "{sampling:?} {total}");
            assert!(inside >= 97, "{sampling:?} {inside}");
        }
    }

    #[test]
    fn saturated_account_gets_mostly_topic() {
        let p = platform(Sampling::Stratified);
        let reg = p.register();
        let cooking: Vec<String> = p
            .corpus()
            .topic_pool("cooking")
            .iter()
            .take(20)
            .map(|&i| p.corpus().videos()[i].video_id.clone())
            .collect();
        for id in &cooking {
            let d = p.corpus().get(id).unwrap().duration_ms;
            let report = WatchReport { video_id: id.clone(), watch_duration_ms: d, finished: true };
            assert_eq!(p.record_watch(&reg.account_id, &report).unwrap(), SignalKind::WatchFull);
        }
        assert_eq!(p.account_state(&reg.account_id).unwrap().score("cooking"), 50.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let page = p.serve_feed(&reg.account_id, 200, FeedMode::Fetch, &mut rng).unwrap();
        assert!(on_topic(&p, &page, "cooking") >= 70);
    }

    #[test]
    fn watch_classification() {
        let p = platform(Sampling::Stratified);
        let reg = p.register();
        let v = p.corpus().videos()[0].clone();
        let r = |ms, finished| WatchReport { video_id: v.video_id.clone(), watch_duration_ms: ms, finished };
        assert_eq!(p.record_watch(&reg.account_id, &r(2000, false)).unwrap(), SignalKind::Skip);
        assert_eq!(p.record_watch(&reg.account_id, &r(2001, false)).unwrap(), SignalKind::WatchPartial);
        assert!(matches!(
            p.record_watch(&reg.account_id, &r(v.duration_ms - 1, true)),
            Err(PlatformError::Protocol(_))
        ));
        let unknown = WatchReport { video_id: "nope".into(), watch_duration_ms: 1, finished: false };
        assert!(matches!(p.record_watch(&reg.account_id, &unknown), Err(PlatformError::UnknownVideo(_))));
        assert!(matches!(p.record_watch("ghost", &r(1, false)), Err(PlatformError::UnknownAccount(_))));
    }

    #[test]
    fn search_does_not_mark_seen() {
        let p = platform(Sampling::Stratified);
        let reg = p.register();
        let before = p.state_digest(&reg.account_id).unwrap();
        let kws = crate::topics::find(&default_topics(), "fitness").unwrap().keywords.clone();
        let page = p.search_feed(&kws, 25).unwrap();
        assert_eq!(page.videos.len(), 25);
        assert_eq!(on_topic(&p, &page, "fitness"), 25);
        assert_eq!(p.state_digest(&reg.account_id).unwrap(), before);
        assert!(p.search_feed(&["unmatched".into()], 5).unwrap().videos.is_empty());
        assert!(p.search_feed(&[" ".into()], 5).is_err());
    }

    #[test]
    fn registrations_are_distinct_and_seeded() {
        let a = platform(Sampling::Stratified);
        let b = platform(Sampling::Stratified);
        let ra: Vec<_> = (0..3).map(|_| a.register()).collect();
        let rb: Vec<_> = (0..3).map(|_| b.register()).collect();
        assert_eq!(ra, rb);
        assert_ne!(ra[0].account_id, ra[1].account_id);
        let back = Registration::from_json(&ra[0].to_json()).unwrap();
        assert_eq!(back, ra[0]);
    }
}
