//! Binary wire protocol: TLV codec, message schema, dictionary
//! compression and request signing.

pub mod codec;
pub mod compress;
pub mod messages;
pub mod sign;

pub use codec::DecodeError;
pub use compress::{compress_payload, decompress_payload, CompressError, Dictionary};
pub use messages::{
    Ack, AppLogBatch, AppLogEvent, EncodeError, Envelope, FeedPage, FeedRequestBody, FeedbackBody, FeedbackItem,
    FeedbackKind, PublicVideo, StatsBody, WatchReport, WireMessage,
};
pub use sign::{sign_in_place, sign_request, verify_request, RejectReason, SignError, SignatureHeaders, SigningKey};

/// Endpoint paths served by the platform.
pub mod paths {
    /// Scroll-mode feed (POST, binary body). Mutates seen-state.
    pub const FEED: &str = "/aweme/v2/feed";
    /// Fetch-mode feed (GET). Read-only.
    pub const FETCH_FEED: &str = "/api/v2/feed";
    pub const STATS: &str = "/aweme/v1/aweme/stats";
    pub const FEEDBACK: &str = "/tiktok/v1/realtime/feedback";
    /// Compressed event log (POST, `application/octet-stream;tt-data=b`).
    pub const APP_LOG: &str = "/service/2/app_log/";
    pub const SEARCH: &str = "/aweme/v1/search/item/";
    /// Unsigned account registration.
    pub const REGISTER: &str = "/passport/account/register";

    /// Path without its query string.
    pub fn route(path: &str) -> &str {
        path.split_once('?').map_or(path, |(p, _)| p)
    }
}

pub const CONTENT_TYPE_PROTOBUF: &str = "application/x-protobuf";
pub const CONTENT_TYPE_APP_LOG: &str = "application/octet-stream;tt-data=b";
