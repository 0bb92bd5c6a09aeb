//! Request and response bodies for the feed service endpoints.
//!
//! Field numbers are part of the wire contract; see `docs/wire-schema.md`.
//! Every signal-bearing body starts with the same four envelope fields
//! (1..=4) so identity rewriting only has to touch one place.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::codec::{DecodeError, Decoder, Encoder};
use crate::classifier::VideoMeta;

/// Upper bound accepted for any millisecond duration (one day).
pub const MAX_DURATION_MS: u64 = 86_400_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("required field `{0}` is empty")]
    MissingField(&'static str),
    #[error("field `{field}` out of range: {value}")]
    Overflow { field: &'static str, value: u64 },
}

pub trait WireMessage: Sized {
    fn encode(&self) -> Result<Vec<u8>, EncodeError>;
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub account_id: String,
    pub device_id: String,
    pub session_nonce: u64,
    pub client_timestamp_ms: u64,
}

impl Envelope {
    fn validate(&self) -> Result<(), EncodeError> {
        if self.account_id.is_empty() {
            return Err(EncodeError::MissingField("account_id"));
        }
        if self.device_id.is_empty() {
            return Err(EncodeError::MissingField("device_id"));
        }
        if self.session_nonce == 0 {
            return Err(EncodeError::MissingField("session_nonce"));
        }
        Ok(())
    }

    fn write(&self, e: &mut Encoder) {
        e.string(1, &self.account_id)
            .string(2, &self.device_id)
            .varint(3, self.session_nonce)
            .varint(4, self.client_timestamp_ms);
    }

    /// Consumes envelope fields; returns false for fields it does not own.
    fn read(&mut self, field: &super::codec::Field<'_>) -> Result<bool, DecodeError> {
        match field.number {
            1 => self.account_id = field.as_string()?,
            2 => self.device_id = field.as_string()?,
            3 => self.session_nonce = field.as_u64()?,
            4 => self.client_timestamp_ms = field.as_u64()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn check(&self) -> Result<(), DecodeError> {
        if self.account_id.is_empty() {
            return Err(DecodeError::Missing("account_id"));
        }
        if self.device_id.is_empty() {
            return Err(DecodeError::Missing("device_id"));
        }
        if self.session_nonce == 0 {
            return Err(DecodeError::Missing("session_nonce"));
        }
        Ok(())
    }
}

fn check_duration(field: &'static str, value: u64) -> Result<(), EncodeError> {
    if value > MAX_DURATION_MS {
        Err(EncodeError::Overflow { field, value })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchReport {
    pub video_id: String,
    pub watch_duration_ms: u64,
    pub finished: bool,
}

impl WatchReport {
    fn validate(&self) -> Result<(), EncodeError> {
        if self.video_id.is_empty() {
            return Err(EncodeError::MissingField("video_id"));
        }
        check_duration("watch_duration_ms", self.watch_duration_ms)
    }

    fn write(&self, e: &mut Encoder) {
        e.string(1, &self.video_id).varint(2, self.watch_duration_ms).bool(3, self.finished);
    }

    fn read(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut out = WatchReport::default();
        for field in Decoder::new(bytes) {
            let field = field?;
            match field.number {
                1 => out.video_id = field.as_string()?,
                2 => out.watch_duration_ms = field.as_u64()?,
                3 => out.finished = field.as_bool()?,
                _ => {}
            }
        }
        if out.video_id.is_empty() {
            return Err(DecodeError::Missing("video_id"));
        }
        Ok(out)
    }
}

/// Scroll-mode feed request: acknowledges the previous page's impressions
/// and asks for the next `count` videos.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedRequestBody {
    pub envelope: Envelope,
    pub watch_reports: Vec<WatchReport>,
    pub count: u32,
}

impl WireMessage for FeedRequestBody {
    fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        self.envelope.validate()?;
        let mut e = Encoder::new();
        self.envelope.write(&mut e);
        for report in &self.watch_reports {
            report.validate()?;
            e.message(5, |m| report.write(m));
        }
        e.varint(6, self.count as u64);
        Ok(e.finish())
    }

    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut out = FeedRequestBody::default();
        for field in Decoder::new(bytes) {
            let field = field?;
            if out.envelope.read(&field)? {
                continue;
            }
            match field.number {
                5 => out.watch_reports.push(field.as_message(WatchReport::read)?),
                6 => out.count = field.as_u32()?,
                _ => {}
            }
        }
        out.envelope.check()?;
        Ok(out)
    }
}

/// Play statistics: one entry per viewed video.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsBody {
    pub envelope: Envelope,
    pub reports: Vec<WatchReport>,
}

impl WireMessage for StatsBody {
    fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        self.envelope.validate()?;
        let mut e = Encoder::new();
        self.envelope.write(&mut e);
        for report in &self.reports {
            report.validate()?;
            e.message(5, |m| report.write(m));
        }
        Ok(e.finish())
    }

    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut out = StatsBody::default();
        for field in Decoder::new(bytes) {
            let field = field?;
            if out.envelope.read(&field)? {
                continue;
            }
            if field.number == 5 {
                out.reports.push(field.as_message(WatchReport::read)?);
            }
        }
        out.envelope.check()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Play,
    NotInterested,
}

impl FeedbackKind {
    fn code(self) -> u64 {
        match self {
            FeedbackKind::Play => 1,
            FeedbackKind::NotInterested => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub video_id: String,
    pub kind: FeedbackKind,
    pub dwell_ms: u64,
}

impl FeedbackItem {
    fn read(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut video_id = String::new();
        let mut kind = None;
        let mut dwell_ms = 0;
        for field in Decoder::new(bytes) {
            let field = field?;
            match field.number {
                1 => video_id = field.as_string()?,
                2 => {
                    kind = Some(match field.as_u64()? {
                        1 => FeedbackKind::Play,
                        2 => FeedbackKind::NotInterested,
                        other => {
                            return Err(DecodeError::Invalid {
                                field: 2,
                                offset: field.value_offset,
                                reason: format!("feedback kind {other}"),
                            })
                        }
                    })
                }
                3 => dwell_ms = field.as_u64()?,
                _ => {}
            }
        }
        if video_id.is_empty() {
            return Err(DecodeError::Missing("video_id"));
        }
        Ok(FeedbackItem { video_id, kind: kind.ok_or(DecodeError::Missing("kind"))?, dwell_ms })
    }
}

/// Real-time feedback events (plays and "not interested" marks).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackBody {
    pub envelope: Envelope,
    pub items: Vec<FeedbackItem>,
}

impl WireMessage for FeedbackBody {
    fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        self.envelope.validate()?;
        let mut e = Encoder::new();
        self.envelope.write(&mut e);
        for item in &self.items {
            if item.video_id.is_empty() {
                return Err(EncodeError::MissingField("video_id"));
            }
            check_duration("dwell_ms", item.dwell_ms)?;
            e.message(5, |m| {
                m.string(1, &item.video_id).varint(2, item.kind.code()).varint(3, item.dwell_ms);
            });
        }
        Ok(e.finish())
    }

    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut out = FeedbackBody::default();
        for field in Decoder::new(bytes) {
            let field = field?;
            if out.envelope.read(&field)? {
                continue;
            }
            if field.number == 5 {
                out.items.push(field.as_message(FeedbackItem::read)?);
            }
        }
        out.envelope.check()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppLogEvent {
    pub event: String,
    pub account_id: String,
    pub video_id: String,
    pub dwell_ms: u64,
}

/// Client event log. Sent compressed with the shared dictionary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppLogBatch {
    pub envelope: Envelope,
    pub events: Vec<AppLogEvent>,
}

impl WireMessage for AppLogBatch {
    fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        self.envelope.validate()?;
        let mut e = Encoder::new();
        self.envelope.write(&mut e);
        for ev in &self.events {
            if ev.event.is_empty() {
                return Err(EncodeError::MissingField("event"));
            }
            check_duration("dwell_ms", ev.dwell_ms)?;
            e.message(5, |m| {
                m.string(1, &ev.event).string(2, &ev.account_id).string(3, &ev.video_id).varint(4, ev.dwell_ms);
            });
        }
        Ok(e.finish())
    }

    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut out = AppLogBatch::default();
        for field in Decoder::new(bytes) {
            let field = field?;
            if out.envelope.read(&field)? {
                continue;
            }
            if field.number == 5 {
                out.events.push(field.as_message(|b| {
                    let mut ev = AppLogEvent::default();
                    for f in Decoder::new(b) {
                        let f = f?;
                        match f.number {
                            1 => ev.event = f.as_string()?,
                            2 => ev.account_id = f.as_string()?,
                            3 => ev.video_id = f.as_string()?,
                            4 => ev.dwell_ms = f.as_u64()?,
                            _ => {}
                        }
                    }
                    Ok(ev)
                })?);
            }
        }
        out.envelope.check()?;
        Ok(out)
    }
}

/// Public view of a video as served to clients. Ground-truth topics are
/// never part of it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicVideo {
    pub video_id: String,
    pub duration_ms: u64,
    pub meta: VideoMeta,
}

impl PublicVideo {
    fn write(&self, e: &mut Encoder) {
        e.string(1, &self.video_id).string(2, &self.meta.description);
        for tag in &self.meta.hashtags {
            e.string(3, tag);
        }
        for word in &self.meta.suggested_words {
            e.string(4, word);
        }
        e.string(5, &self.meta.nickname).string(6, &self.meta.signature).varint(7, self.duration_ms);
    }

    fn read(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut v = PublicVideo::default();
        for field in Decoder::new(bytes) {
            let field = field?;
            match field.number {
                1 => v.video_id = field.as_string()?,
                2 => v.meta.description = field.as_string()?,
                3 => v.meta.hashtags.push(field.as_string()?),
                4 => v.meta.suggested_words.push(field.as_string()?),
                5 => v.meta.nickname = field.as_string()?,
                6 => v.meta.signature = field.as_string()?,
                7 => v.duration_ms = field.as_u64()?,
                _ => {}
            }
        }
        if v.video_id.is_empty() {
            return Err(DecodeError::Missing("video_id"));
        }
        Ok(v)
    }
}

/// Response body of the feed, fetch and search endpoints.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedPage {
    pub videos: Vec<PublicVideo>,
    pub page_token: String,
}

impl WireMessage for FeedPage {
    fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut e = Encoder::new();
        for v in &self.videos {
            if v.video_id.is_empty() {
                return Err(EncodeError::MissingField("video_id"));
            }
            check_duration("duration_ms", v.duration_ms)?;
            e.message(1, |m| v.write(m));
        }
        e.string(2, &self.page_token);
        Ok(e.finish())
    }

    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut out = FeedPage::default();
        for field in Decoder::new(bytes) {
            let field = field?;
            match field.number {
                1 => out.videos.push(field.as_message(PublicVideo::read)?),
                2 => out.page_token = field.as_string()?,
                _ => {}
            }
        }
        Ok(out)
    }
}

/// Generic acknowledgement: number of signals applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub applied: u32,
}

impl WireMessage for Ack {
    fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut e = Encoder::new();
        e.varint(1, self.applied as u64);
        Ok(e.finish())
    }

    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut out = Ack::default();
        for field in Decoder::new(bytes) {
            let field = field?;
            if field.number == 1 {
                out.applied = field.as_u32()?;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn envelope() -> Envelope {
        Envelope {
            account_id: "u0011223344556677".into(),
            device_id: "d8899aabbccddeeff".into(),
            session_nonce: 7,
            client_timestamp_ms: 1_742_169_600_000,
        }
    }

    #[test]
    fn empty_watch_reports_round_trip() {
        let body = FeedRequestBody { envelope: envelope(), watch_reports: vec![], count: 8 };
        let decoded = FeedRequestBody::decode(&body.encode().unwrap()).unwrap();
        assert!(decoded.watch_reports.is_empty());
        assert_eq!(decoded, body);
    }

    #[test]
    fn encoding_is_deterministic() {
        let body = StatsBody {
            envelope: envelope(),
            reports: vec![WatchReport { video_id: "v000000000001".into(), watch_duration_ms: 15_000, finished: true }],
        };
        assert_eq!(body.encode().unwrap(), body.encode().unwrap());
    }

    #[test]
    fn two_hundred_reports_fit_in_64k() {
        let reports = (0..200)
            .map(|i| WatchReport { video_id: format!("v{i:012}"), watch_duration_ms: 60_000, finished: true })
            .collect();
        let body = FeedRequestBody { envelope: envelope(), watch_reports: reports, count: 8 };
        let bytes = body.encode().unwrap();
        assert!(bytes.len() < 64 * 1024, "{} bytes", bytes.len());
    }

    #[test]
    fn encode_rejects_missing_identity_and_overflow() {
        let mut env = envelope();
        env.session_nonce = 0;
        let body = StatsBody { envelope: env, reports: vec![] };
        assert_eq!(body.encode(), Err(EncodeError::MissingField("session_nonce")));

        let body = StatsBody {
            envelope: envelope(),
            reports: vec![WatchReport {
                video_id: "v1".into(),
                watch_duration_ms: MAX_DURATION_MS + 1,
                finished: false,
            }],
        };
        assert!(matches!(body.encode(), Err(EncodeError::Overflow { field: "watch_duration_ms", .. })));
    }

    #[test]
    fn unknown_fields_are_skipped() {
        let body = StatsBody {
            envelope: envelope(),
            reports: vec![WatchReport { video_id: "v1".into(), watch_duration_ms: 900, finished: false }],
        };
        let mut bytes = body.encode().unwrap();
        let mut extra = Encoder::new();
        extra.varint(99, 12345).string(42, "future").message(77, |m| {
            m.varint(1, 1);
        });
        bytes.extend(extra.finish());
        assert_eq!(StatsBody::decode(&bytes).unwrap(), body);
    }

    #[test]
    fn truncation_is_a_decode_error_with_offset() {
        let body = FeedbackBody {
            envelope: envelope(),
            items: vec![FeedbackItem { video_id: "v9".into(), kind: FeedbackKind::NotInterested, dwell_ms: 12_000 }],
        };
        let bytes = body.encode().unwrap();
        let err = FeedbackBody::decode(&bytes[..bytes.len() - 2]).unwrap_err();
        match err {
            DecodeError::Truncated { offset } => assert!(offset <= bytes.len()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nested_errors_carry_absolute_offsets() {
        let mut e = Encoder::new();
        envelope().write(&mut e);
        let start = e.finish().len();
        let mut e = Encoder::new();
        envelope().write(&mut e);
        // Feedback item with an invalid kind.
        e.message(5, |m| {
            m.string(1, "v1").varint(2, 9);
        });
        let bytes = e.finish();
        match FeedbackBody::decode(&bytes).unwrap_err() {
            DecodeError::Invalid { field: 2, offset, .. } => assert!(offset > start),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn feed_page_round_trip() {
        let page = FeedPage {
            videos: vec![PublicVideo {
                video_id: "v1".into(),
                duration_ms: 30_000,
                meta: VideoMeta {
                    description: "easy weeknight pasta".into(),
                    hashtags: vec!["cooking".into(), "pasta".into()],
                    suggested_words: vec!["recipes".into()],
                    nickname: "chef".into(),
                    signature: "I cook".into(),
                },
            }],
            page_token: "abc".into(),
        };
        assert_eq!(FeedPage::decode(&page.encode().unwrap()).unwrap(), page);
    }
}
