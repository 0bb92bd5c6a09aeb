//! Account cloning: identity rewrite of a recorded signal trace, replay
//! against the platform, and statistical verification of the clones.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Classifier;
use crate::http::Transport;
use crate::platform::Registration;
use crate::proxy::{RecordedExchange, SignalTrace};
use crate::puppet::Client;
use crate::stats::{agresti_coull, Interval, StatsError};
use crate::topics::TopicProfile;
use crate::wire::sign::{HEADER_ACCOUNT_ID, HEADER_DEVICE_ID};
use crate::wire::{
    compress_payload, decompress_payload, paths, sign_in_place, verify_request, AppLogBatch, Dictionary, Envelope,
    FeedRequestBody, FeedbackBody, SigningKey, StatsBody, WireMessage,
};

#[derive(Debug, Error)]
pub enum CloneError {
    #[error("exchange {seq} fails source verification: {reason}")]
    Integrity { seq: u64, reason: String },
    #[error("exchange {seq} body: {reason}")]
    Body { seq: u64, reason: String },
    #[error("replay rejected at exchange {seq} with status {status}: {message}")]
    Rejected { seq: u64, status: u16, message: String },
    #[error("transport failure at exchange {seq}: {message}")]
    Transport { seq: u64, message: String },
    #[error("fetch for {account}: {message}")]
    Fetch { account: String, message: String },
    #[error("verification needs at least one clone and one baseline")]
    EmptyGroup,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Source and target identities of one clone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityRewrite {
    pub source_account_id: String,
    pub source_device_id: String,
    pub target_account_id: String,
    pub target_device_id: String,
    pub target_key: SigningKey,
}

impl IdentityRewrite {
    pub fn new(source: &SignalTrace, target: &Registration) -> Self {
        Self {
            source_account_id: source.account_id.clone(),
            source_device_id: source.device_id.clone(),
            target_account_id: target.account_id.clone(),
            target_device_id: target.device_id.clone(),
            target_key: target.key.clone(),
        }
    }

    fn envelope(&self, env: &mut Envelope) {
        env.account_id = self.target_account_id.clone();
        env.device_id = self.target_device_id.clone();
    }
}

fn body_err(seq: u64) -> impl Fn(String) -> CloneError {
    move |reason| CloneError::Body { seq, reason }
}

fn reencode<M: WireMessage>(seq: u64, bytes: &[u8], edit: impl FnOnce(&mut M)) -> Result<Vec<u8>, CloneError> {
    let mut msg = M::decode(bytes).map_err(|e| body_err(seq)(e.to_string()))?;
    edit(&mut msg);
    msg.encode().map_err(|e| body_err(seq)(e.to_string()))
}

fn rewrite_body(
    x: &RecordedExchange,
    rewrite: &IdentityRewrite,
    dictionary: &Dictionary,
) -> Result<Vec<u8>, CloneError> {
    let seq = x.sequence_no;
    match x.route() {
        paths::FEED => reencode::<FeedRequestBody>(seq, &x.request_body, |m| rewrite.envelope(&mut m.envelope)),
        paths::STATS => reencode::<StatsBody>(seq, &x.request_body, |m| rewrite.envelope(&mut m.envelope)),
        paths::FEEDBACK => reencode::<FeedbackBody>(seq, &x.request_body, |m| rewrite.envelope(&mut m.envelope)),
        paths::APP_LOG => {
            let plain = decompress_payload(&x.request_body, dictionary).map_err(|e| body_err(seq)(e.to_string()))?;
            let plain = reencode::<AppLogBatch>(seq, &plain, |m| {
                rewrite.envelope(&mut m.envelope);
                for e in &mut m.events {
                    if e.account_id == rewrite.source_account_id {
                        e.account_id = rewrite.target_account_id.clone();
                    }
                }
            })?;
            Ok(compress_payload(&plain, dictionary))
        }
        other => Err(body_err(seq)(format!("{other} is not a signal endpoint"))),
    }
}

/// Replaces every identity field, body and header level, and re-signs each
/// exchange with the target key. Non-identity fields are carried over.
pub fn rewrite_trace(
    trace: &SignalTrace,
    rewrite: &IdentityRewrite,
    source_key: &SigningKey,
    dictionary: &Dictionary,
) -> Result<SignalTrace, CloneError> {
    let mut out = Vec::with_capacity(trace.exchanges.len());
    for x in &trace.exchanges {
        let seq = x.sequence_no;
        verify_request(&x.request(), |id| (id == source_key.key_id).then(|| source_key.clone()))
            .map_err(|r| CloneError::Integrity { seq, reason: r.to_string() })?;
        if x.header(HEADER_ACCOUNT_ID) != Some(rewrite.source_account_id.as_str()) {
            return Err(CloneError::Integrity { seq, reason: "exchange belongs to another account".into() });
        }
        let mut req = x.request();
        req.body = rewrite_body(x, rewrite, dictionary)?;
        req.set_header(HEADER_ACCOUNT_ID, &rewrite.target_account_id);
        req.set_header(HEADER_DEVICE_ID, &rewrite.target_device_id);
        sign_in_place(&mut req, &rewrite.target_key)
            .map_err(|e| CloneError::Integrity { seq, reason: e.to_string() })?;
        out.push(RecordedExchange {
            sequence_no: seq,
            timestamp_ms: x.timestamp_ms,
            method: req.method,
            path: req.path,
            request_headers: req.headers,
            request_body: req.body,
            response_status: x.response_status,
            response_body: x.response_body.clone(),
        });
    }
    Ok(SignalTrace {
        account_id: rewrite.target_account_id.clone(),
        device_id: rewrite.target_device_id.clone(),
        exchanges: out,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "factor", rename_all = "snake_case")]
pub enum Pacing {
    /// As fast as the platform accepts.
    #[default]
    None,
    /// Sleeps the recorded gap between exchanges.
    Recorded,
    /// Sleeps the recorded gap times the factor.
    Scaled(f64),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub accepted: usize,
    /// Highest envelope nonce sent; the target's agent continues after it.
    pub last_nonce: u64,
    pub last_timestamp_ms: u64,
}

fn envelope_nonce(x: &RecordedExchange, dictionary: &Dictionary) -> Option<u64> {
    match x.route() {
        paths::FEED => FeedRequestBody::decode(&x.request_body).ok().map(|m| m.envelope.session_nonce),
        paths::STATS => StatsBody::decode(&x.request_body).ok().map(|m| m.envelope.session_nonce),
        paths::FEEDBACK => FeedbackBody::decode(&x.request_body).ok().map(|m| m.envelope.session_nonce),
        paths::APP_LOG => decompress_payload(&x.request_body, dictionary)
            .ok()
            .and_then(|p| AppLogBatch::decode(&p).ok())
            .map(|m| m.envelope.session_nonce),
        _ => None,
    }
}

/// Sends every exchange in order. The first rejection aborts the replay.
pub fn replay<T: Transport>(
    trace: &SignalTrace,
    transport: &T,
    pacing: Pacing,
    dictionary: &Dictionary,
) -> Result<ReplayReport, CloneError> {
    let mut report = ReplayReport::default();
    let mut prev_ts: Option<u64> = None;
    for x in &trace.exchanges {
        let factor = match pacing {
            Pacing::None => 0.0,
            Pacing::Recorded => 1.0,
            Pacing::Scaled(f) => f.max(0.0),
        };
        if let Some(prev) = prev_ts {
            let gap = x.timestamp_ms.saturating_sub(prev) as f64 * factor;
            if gap > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(gap / 1000.0));
            }
        }
        prev_ts = Some(x.timestamp_ms);
        let seq = x.sequence_no;
        let response =
            transport.send(x.request()).map_err(|e| CloneError::Transport { seq, message: e.to_string() })?;
        if !response.is_success() {
            return Err(CloneError::Rejected { seq, status: response.status, message: response.text() });
        }
        report.accepted += 1;
        report.last_nonce = report.last_nonce.max(envelope_nonce(x, dictionary).unwrap_or(0));
        report.last_timestamp_ms = report.last_timestamp_ms.max(x.timestamp_ms);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Original,
    Clone,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountInterval {
    pub account_id: String,
    pub group: Group,
    pub on_topic: u64,
    pub fetched: u64,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailingPair {
    pub clone: String,
    pub other: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneVerdict {
    pub topic_id: String,
    pub confidence: f64,
    /// Original first, then clones, then baselines.
    pub accounts: Vec<AccountInterval>,
    /// `overlap[i][j]`: intervals of accounts i and j intersect.
    pub overlap: Vec<Vec<bool>>,
    pub failing_pairs: Vec<FailingPair>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyParams {
    pub fetch_count: usize,
    pub page_size: u32,
    pub confidence: f64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self { fetch_count: 200, page_size: 50, confidence: 0.99 }
    }
}

fn measure<T: Transport>(
    client: &Client<T>,
    group: Group,
    params: &VerifyParams,
    topic: &TopicProfile,
    classifier: &dyn Classifier,
) -> Result<AccountInterval, CloneError> {
    let account = client.account_id().to_string();
    let videos = client
        .fetch(params.fetch_count, params.page_size)
        .map_err(|e| CloneError::Fetch { account: account.clone(), message: e.to_string() })?;
    if videos.len() < params.fetch_count {
        return Err(CloneError::Fetch {
            account,
            message: format!("only {} of {} videos available", videos.len(), params.fetch_count),
        });
    }
    let on_topic = videos
        .iter()
        .filter(|v| {
            classifier.classify(&v.meta, topic).unwrap_or_else(|e| {
                log::warn!("classifier failed during verification, counting off-topic: {e}");
                false
            })
        })
        .count() as u64;
    let fetched = videos.len() as u64;
    Ok(AccountInterval {
        account_id: account,
        group,
        on_topic,
        fetched,
        interval: agresti_coull(on_topic, fetched, params.confidence)?,
    })
}

/// Draws fetch-mode pages for every account and compares Agresti-Coull
/// intervals. Passes iff each clone overlaps the original and no clone
/// overlaps any baseline.
pub fn verify_clones<T: Transport>(
    original: &Client<T>,
    clones: &[&Client<T>],
    baselines: &[&Client<T>],
    params: &VerifyParams,
    topic: &TopicProfile,
    classifier: &dyn Classifier,
) -> Result<CloneVerdict, CloneError> {
    if clones.is_empty() || baselines.is_empty() {
        return Err(CloneError::EmptyGroup);
    }
    let mut accounts = vec![measure(original, Group::Original, params, topic, classifier)?];
    for c in clones {
        accounts.push(measure(c, Group::Clone, params, topic, classifier)?);
    }
    for b in baselines {
        accounts.push(measure(b, Group::Baseline, params, topic, classifier)?);
    }
    let overlap: Vec<Vec<bool>> =
        accounts.iter().map(|a| accounts.iter().map(|b| a.interval.overlaps(&b.interval)).collect()).collect();

    let mut failing_pairs = Vec::new();
    for (i, c) in accounts.iter().enumerate().filter(|(_, a)| a.group == Group::Clone) {
        if !overlap[i][0] {
            failing_pairs.push(FailingPair {
                clone: c.account_id.clone(),
                other: accounts[0].account_id.clone(),
                reason: "clone interval disjoint from original".into(),
            });
        }
        for (j, b) in accounts.iter().enumerate().filter(|(_, a)| a.group == Group::Baseline) {
            if overlap[i][j] {
                failing_pairs.push(FailingPair {
                    clone: c.account_id.clone(),
                    other: b.account_id.clone(),
                    reason: "clone interval overlaps baseline".into(),
                });
            }
        }
    }
    Ok(CloneVerdict {
        topic_id: topic.topic_id.clone(),
        confidence: params.confidence,
        pass: failing_pairs.is_empty(),
        accounts,
        overlap,
        failing_pairs,
    })
}
