//! Request signing and server-side verification.
//!
//! Canonical request (newline-joined, then HMAC-SHA256 under the account's
//! key):
//!
//! ```text
//! METHOD
//! /path?query
//! content-type:<value>
//! x-fl-account-id:<value>
//! x-fl-device-id:<value>
//! x-fl-key-id:<key id>
//! <hex sha256 of body>
//! ```
//!
//! `X-FL-Sig-Body` is the HMAC of the raw body bytes. Headers outside the
//! signed set may appear in any order and are not covered.

use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::HttpRequest;

pub const HEADER_SIG_MAIN: &str = "X-FL-Sig-Main";
pub const HEADER_SIG_BODY: &str = "X-FL-Sig-Body";
pub const HEADER_KEY_ID: &str = "X-FL-Key-Id";
pub const HEADER_ACCOUNT_ID: &str = "X-FL-Account-Id";
pub const HEADER_DEVICE_ID: &str = "X-FL-Device-Id";

/// Lower-cased names of the headers covered by `X-FL-Sig-Main`, in
/// canonical order.
pub const SIGNED_HEADERS: [&str; 3] = ["content-type", "x-fl-account-id", "x-fl-device-id"];

type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, PartialEq, Eq)]
pub struct SigningKey {
    pub key_id: String,
    pub secret: [u8; 32],
}

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SigningKey").field("key_id", &self.key_id).finish_non_exhaustive()
    }
}

impl SigningKey {
    pub fn new(key_id: impl Into<String>, secret: [u8; 32]) -> Self {
        Self { key_id: key_id.into(), secret }
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.secret).expect("HMAC takes any key length")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureHeaders {
    pub sig_main: String,
    pub sig_body: String,
    pub key_id: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SignError {
    #[error("no signing key configured")]
    MissingKey,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RejectReason {
    #[error("missing header {0}")]
    MissingHeader(&'static str),
    #[error("unknown key id {0}")]
    UnknownKey(String),
    #[error("body hash mismatch")]
    BadBodyHash,
    #[error("canonical request hash mismatch")]
    BadCanonicalHash,
}

fn find_header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
}

pub fn canonical_request(method: &str, path: &str, headers: &[(String, String)], key_id: &str, body: &[u8]) -> String {
    let mut lines = Vec::with_capacity(SIGNED_HEADERS.len() + 4);
    lines.push(method.to_string());
    lines.push(path.to_string());
    for name in SIGNED_HEADERS {
        lines.push(format!("{name}:{}", find_header(headers, name).unwrap_or("")));
    }
    lines.push(format!("x-fl-key-id:{key_id}"));
    lines.push(hex::encode(Sha256::digest(body)));
    lines.join("\n")
}

pub fn sign_request(
    method: &str,
    path: &str,
    headers: &[(String, String)],
    body: &[u8],
    key: Option<&SigningKey>,
) -> Result<SignatureHeaders, SignError> {
    let key = key.ok_or(SignError::MissingKey)?;
    let canonical = canonical_request(method, path, headers, &key.key_id, body);
    let mut main = key.mac();
    main.update(canonical.as_bytes());
    let mut body_mac = key.mac();
    body_mac.update(body);
    Ok(SignatureHeaders {
        sig_main: hex::encode(main.finalize().into_bytes()),
        sig_body: hex::encode(body_mac.finalize().into_bytes()),
        key_id: key.key_id.clone(),
    })
}

/// Signs `req` and sets the three signature headers, replacing old ones.
pub fn sign_in_place(req: &mut HttpRequest, key: &SigningKey) -> Result<(), SignError> {
    let sig = sign_request(&req.method, &req.path, &req.headers, &req.body, Some(key))?;
    req.set_header(HEADER_SIG_MAIN, &sig.sig_main);
    req.set_header(HEADER_SIG_BODY, &sig.sig_body);
    req.set_header(HEADER_KEY_ID, &sig.key_id);
    Ok(())
}

/// Recomputes both digests of `req` and compares them with its headers.
pub fn verify_request(req: &HttpRequest, lookup: impl Fn(&str) -> Option<SigningKey>) -> Result<(), RejectReason> {
    let key_id = req.header(HEADER_KEY_ID).ok_or(RejectReason::MissingHeader(HEADER_KEY_ID))?;
    let sig_main = req.header(HEADER_SIG_MAIN).ok_or(RejectReason::MissingHeader(HEADER_SIG_MAIN))?;
    let sig_body = req.header(HEADER_SIG_BODY).ok_or(RejectReason::MissingHeader(HEADER_SIG_BODY))?;
    let key = lookup(key_id).ok_or_else(|| RejectReason::UnknownKey(key_id.to_string()))?;

    let mut body_mac = key.mac();
    body_mac.update(&req.body);
    let claimed = hex_exact(sig_body).ok_or(RejectReason::BadBodyHash)?;
    body_mac.verify_slice(&claimed).map_err(|_| RejectReason::BadBodyHash)?;

    let canonical = canonical_request(&req.method, &req.path, &req.headers, key_id, &req.body);
    let mut main = key.mac();
    main.update(canonical.as_bytes());
    let claimed = hex_exact(sig_main).ok_or(RejectReason::BadCanonicalHash)?;
    main.verify_slice(&claimed).map_err(|_| RejectReason::BadCanonicalHash)
}

/// Lower-case hex only; any other spelling of the digest is rejected so a
/// signature header has exactly one valid byte representation.
fn hex_exact(s: &str) -> Option<Vec<u8>> {
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return None;
    }
    hex::decode(s).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> SigningKey {
        SigningKey::new("k-test", [7u8; 32])
    }

    fn request() -> HttpRequest {
        let mut req = HttpRequest::new("POST", "/aweme/v1/aweme/stats?origin=fyp", b"\x0a\x03abc".to_vec());
        req.set_header("Content-Type", "application/x-protobuf");
        req.set_header(HEADER_ACCOUNT_ID, "u1");
        req.set_header(HEADER_DEVICE_ID, "d1");
        req.set_header("User-Agent", "sim/1.0");
        req
    }

    fn lookup(id: &str) -> Option<SigningKey> {
        (id == "k-test").then(key)
    }

    #[test]
    fn signing_is_deterministic() {
        let r = request();
        let a = sign_request(&r.method, &r.path, &r.headers, &r.body, Some(&key())).unwrap();
        let b = sign_request(&r.method, &r.path, &r.headers, &r.body, Some(&key())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_key_is_config_error() {
        let r = request();
        assert_eq!(sign_request(&r.method, &r.path, &r.headers, &r.body, None), Err(SignError::MissingKey));
    }

    #[test]
    fn body_flip_changes_main_signature() {
        let r = request();
        let a = sign_request(&r.method, &r.path, &r.headers, &r.body, Some(&key())).unwrap();
        let mut body = r.body.clone();
        body[0] ^= 1;
        let b = sign_request(&r.method, &r.path, &r.headers, &body, Some(&key())).unwrap();
        assert_ne!(a.sig_main, b.sig_main);
        assert_ne!(a.sig_body, b.sig_body);
    }

    #[test]
    fn untampered_request_verifies() {
        let mut r = request();
        sign_in_place(&mut r, &key()).unwrap();
        assert_eq!(verify_request(&r, lookup), Ok(()));
    }

    #[test]
    fn rejections_are_distinguished() {
        let mut r = request();
        sign_in_place(&mut r, &key()).unwrap();

        let mut bad_body = r.clone();
        bad_body.body.push(0);
        assert_eq!(verify_request(&bad_body, lookup), Err(RejectReason::BadBodyHash));

        let mut bad_path = r.clone();
        bad_path.path.push('x');
        assert_eq!(verify_request(&bad_path, lookup), Err(RejectReason::BadCanonicalHash));

        let mut bad_key = r.clone();
        bad_key.set_header(HEADER_KEY_ID, "k-other");
        assert_eq!(verify_request(&bad_key, lookup), Err(RejectReason::UnknownKey("k-other".into())));

        let mut unsigned = request();
        unsigned.set_header(HEADER_KEY_ID, "k-test");
        assert_eq!(verify_request(&unsigned, lookup), Err(RejectReason::MissingHeader(HEADER_SIG_MAIN)));
    }

    #[test]
    fn unsigned_header_order_does_not_matter() {
        let mut r = request();
        r.set_header("Accept", "*/*");
        sign_in_place(&mut r, &key()).unwrap();
        let mut shuffled = r.clone();
        shuffled.headers.reverse();
        assert_eq!(verify_request(&shuffled, lookup), Ok(()));
        shuffled.set_header("User-Agent", "other/2.0");
        assert_eq!(verify_request(&shuffled, lookup), Ok(()));
    }

    #[test]
    fn signed_header_change_is_detected() {
        let mut r = request();
        sign_in_place(&mut r, &key()).unwrap();
        r.set_header(HEADER_DEVICE_ID, "d2");
        assert_eq!(verify_request(&r, lookup), Err(RejectReason::BadCanonicalHash));
    }
}
