//! Dictionary-seeded payload compression for the app-log endpoint.
//!
//! Payloads are Zstandard frames compressed against a shared raw-content
//! dictionary, wrapped in a small header that names the dictionary by
//! fingerprint so a mismatched dictionary is reported instead of producing
//! garbage.
//!
//! ```text
//! compressed := "FLZ1" fingerprint[8] zstd_frame
//! dict file  := "FLDICT01" dictionary_bytes
//! ```

use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DICT_MAGIC: &[u8; 8] = b"FLDICT01";
const FRAME_MAGIC: &[u8; 4] = b"FLZ1";
const LEVEL: i32 = 3;
/// Decompressed payloads larger than this are refused.
pub const MAX_PLAIN_LEN: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum CompressError {
    #[error("dictionary file: {0}")]
    Io(#[from] std::io::Error),
    #[error("dictionary file lacks the FLDICT01 magic prefix")]
    BadDictionaryMagic,
    #[error("payload compressed with a different dictionary")]
    WrongDictionary,
    #[error("corrupt compressed stream: {0}")]
    Corrupt(String),
}

/// Immutable shared dictionary.
#[derive(Clone, PartialEq, Eq)]
pub struct Dictionary {
    bytes: Arc<Vec<u8>>,
    fingerprint: [u8; 8],
}

impl std::fmt::Debug for Dictionary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dictionary")
            .field("len", &self.bytes.len())
            .field("fingerprint", &hex::encode(self.fingerprint))
            .finish()
    }
}

impl Dictionary {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let digest = Sha256::digest(&bytes);
        let mut fingerprint = [0u8; 8];
        fingerprint.copy_from_slice(&digest[..8]);
        Self { bytes: Arc::new(bytes), fingerprint }
    }

    /// Builds a dictionary from representative samples. Later samples end up
    /// closest to the end of the dictionary, where matches are cheapest, so
    /// pass the most typical content last.
    pub fn build(samples: &[&[u8]], max_len: usize) -> Self {
        let mut out: Vec<u8> = Vec::with_capacity(max_len);
        for sample in samples.iter().rev() {
            if out.len() + sample.len() > max_len {
                break;
            }
            let mut next = sample.to_vec();
            next.extend_from_slice(&out);
            out = next;
        }
        Self::from_bytes(out)
    }

    /// The dictionary used by default: the app-log vocabulary.
    pub fn default_app_log() -> Self {
        let mut samples: Vec<Vec<u8>> = Vec::new();
        for event in ["video_play", "video_play_finish", "video_skip", "dislike", "stay_time", "feed_enter"] {
            let batch = super::messages::AppLogBatch {
                envelope: super::messages::Envelope {
                    account_id: "u0000000000000000".into(),
                    device_id: "d0000000000000000".into(),
                    session_nonce: 1,
                    client_timestamp_ms: 1_742_169_600_000,
                },
                events: vec![super::messages::AppLogEvent {
                    event: event.into(),
                    account_id: "u0000000000000000".into(),
                    video_id: "v000000000000".into(),
                    dwell_ms: 12_345,
                }],
            };
            samples.push(super::WireMessage::encode(&batch).expect("static sample encodes"));
        }
        let refs: Vec<&[u8]> = samples.iter().map(Vec::as_slice).collect();
        Self::build(&refs, 16 * 1024)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn fingerprint(&self) -> [u8; 8] {
        self.fingerprint
    }

    pub fn load(path: &Path) -> Result<Self, CompressError> {
        let raw = std::fs::read(path)?;
        Self::from_file_bytes(&raw)
    }

    pub fn from_file_bytes(raw: &[u8]) -> Result<Self, CompressError> {
        match raw.strip_prefix(DICT_MAGIC.as_slice()) {
            Some(rest) => Ok(Self::from_bytes(rest.to_vec())),
            None => Err(CompressError::BadDictionaryMagic),
        }
    }

    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut out = DICT_MAGIC.to_vec();
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CompressError> {
        std::fs::write(path, self.to_file_bytes())?;
        Ok(())
    }
}

pub fn compress_payload(plain: &[u8], dictionary: &Dictionary) -> Vec<u8> {
    let mut compressor = zstd::bulk::Compressor::with_dictionary(LEVEL, dictionary.as_bytes())
        .expect("zstd accepts any raw-content dictionary");
    compressor.include_checksum(true).expect("checksum flag");
    let frame = compressor.compress(plain).expect("in-memory compression cannot fail");
    let mut out = Vec::with_capacity(frame.len() + 12);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&dictionary.fingerprint);
    out.extend_from_slice(&frame);
    out
}

pub fn decompress_payload(compressed: &[u8], dictionary: &Dictionary) -> Result<Vec<u8>, CompressError> {
    let rest = compressed
        .strip_prefix(FRAME_MAGIC.as_slice())
        .ok_or_else(|| CompressError::Corrupt("missing FLZ1 header".into()))?;
    if rest.len() < 8 {
        return Err(CompressError::Corrupt("truncated header".into()));
    }
    let (fingerprint, frame) = rest.split_at(8);
    if fingerprint != dictionary.fingerprint {
        return Err(CompressError::WrongDictionary);
    }
    let decoder = zstd::stream::read::Decoder::with_dictionary(frame, dictionary.as_bytes())
        .map_err(|e| CompressError::Corrupt(e.to_string()))?;
    let mut out = Vec::new();
    decoder.take(MAX_PLAIN_LEN as u64 + 1).read_to_end(&mut out).map_err(|e| CompressError::Corrupt(e.to_string()))?;
    if out.len() > MAX_PLAIN_LEN {
        return Err(CompressError::Corrupt("payload exceeds size limit".into()));
    }
    Ok(out)
}
