//! Trace files: `FLTRACE\0`, a u16 LE version, then records of
//! `u32 LE length | TLV RecordedExchange`. A `.idx` text sidecar lists one
//! line per record.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{ProxyError, RecordedExchange};
use crate::wire::codec::{DecodeError, Decoder, Encoder};

pub const TRACE_MAGIC: &[u8; 8] = b"FLTRACE\0";
pub const TRACE_VERSION: u16 = 1;
const HEADER_LEN: u64 = 10;
/// Upper bound on a single record, guards against corrupt length prefixes.
const MAX_RECORD: u32 = 256 << 20;

pub fn encode_exchange(x: &RecordedExchange) -> Vec<u8> {
    let mut e = Encoder::new();
    e.varint(1, x.sequence_no).varint(2, x.timestamp_ms).string(3, &x.method).string(4, &x.path);
    for (name, value) in &x.request_headers {
        e.message(5, |h| {
            h.string(1, name).string(2, value);
        });
    }
    e.bytes(6, &x.request_body).varint(7, x.response_status as u64).bytes(8, &x.response_body);
    e.finish()
}

fn decode_header(bytes: &[u8]) -> Result<(String, String), DecodeError> {
    let (mut name, mut value) = (String::new(), String::new());
    for field in Decoder::new(bytes) {
        let field = field?;
        match field.number {
            1 => name = field.as_string()?,
            2 => value = field.as_string()?,
            _ => {}
        }
    }
    Ok((name, value))
}

pub fn decode_exchange(bytes: &[u8]) -> Result<RecordedExchange, DecodeError> {
    let mut x = RecordedExchange::default();
    for field in Decoder::new(bytes) {
        let field = field?;
        match field.number {
            1 => x.sequence_no = field.as_u64()?,
            2 => x.timestamp_ms = field.as_u64()?,
            3 => x.method = field.as_string()?,
            4 => x.path = field.as_string()?,
            5 => x.request_headers.push(field.as_message(decode_header)?),
            6 => x.request_body = field.as_bytes()?.to_vec(),
            7 => {
                let status = field.as_u64()?;
                x.response_status = u16::try_from(status).map_err(|_| DecodeError::Invalid {
                    field: 7,
                    offset: field.value_offset,
                    reason: format!("status {status}"),
                })?;
            }
            8 => x.response_body = field.as_bytes()?.to_vec(),
            _ => {}
        }
    }
    Ok(x)
}

pub fn index_path(trace: &Path) -> PathBuf {
    let mut os = trace.as_os_str().to_owned();
    os.push(".idx");
    PathBuf::from(os)
}

/// Append-only writer. Each record is flushed before `append` returns.
pub struct TraceWriter {
    data: BufWriter<File>,
    index: BufWriter<File>,
    offset: u64,
}

impl TraceWriter {
    /// Creates (truncating) `path` and its index, writing the header.
    pub fn create(path: &Path) -> Result<Self, ProxyError> {
        let mut data = BufWriter::new(File::create(path)?);
        data.write_all(TRACE_MAGIC)?;
        data.write_all(&TRACE_VERSION.to_le_bytes())?;
        data.flush()?;
        let mut index = BufWriter::new(File::create(index_path(path))?);
        writeln!(index, "# seq\toffset\tlen\tmethod\tpath\tstatus")?;
        index.flush()?;
        Ok(Self { data, index, offset: HEADER_LEN })
    }

    /// Reopens an existing trace for appending.
    pub fn append_to(path: &Path) -> Result<Self, ProxyError> {
        if !path.exists() {
            return Self::create(path);
        }
        read_trace(path)?;
        let file = OpenOptions::new().append(true).open(path)?;
        let offset = file.metadata()?.len();
        let index = OpenOptions::new().append(true).create(true).open(index_path(path))?;
        Ok(Self { data: BufWriter::new(file), index: BufWriter::new(index), offset })
    }

    pub fn append(&mut self, x: &RecordedExchange) -> Result<(), ProxyError> {
        let record = encode_exchange(x);
        let len = u32::try_from(record.len()).map_err(|_| ProxyError::Format("record too large".into()))?;
        self.data.write_all(&len.to_le_bytes())?;
        self.data.write_all(&record)?;
        self.data.flush()?;
        writeln!(
            self.index,
            "{}\t{}\t{}\t{}\t{}\t{}",
            x.sequence_no,
            self.offset,
            4 + record.len(),
            x.method,
            x.path,
            x.response_status
        )?;
        self.index.flush()?;
        self.offset += 4 + record.len() as u64;
        Ok(())
    }
}

pub fn write_trace(path: &Path, exchanges: &[RecordedExchange]) -> Result<(), ProxyError> {
    let mut w = TraceWriter::create(path)?;
    for x in exchanges {
        w.append(x)?;
    }
    Ok(())
}

pub fn parse_trace(bytes: &[u8]) -> Result<Vec<RecordedExchange>, ProxyError> {
    if bytes.len() < HEADER_LEN as usize || &bytes[..8] != TRACE_MAGIC {
        return Err(ProxyError::Format("missing FLTRACE header".into()));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != TRACE_VERSION {
        return Err(ProxyError::Format(format!("unsupported trace version {version}")));
    }
    let mut out = Vec::new();
    let mut pos = HEADER_LEN as usize;
    while pos < bytes.len() {
        if bytes.len() - pos < 4 {
            return Err(ProxyError::Format(format!("truncated length prefix at byte {pos}")));
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
        if len > MAX_RECORD || bytes.len() - pos - 4 < len as usize {
            return Err(ProxyError::Format(format!("truncated record at byte {pos}")));
        }
        let start = pos + 4;
        let record = decode_exchange(&bytes[start..start + len as usize])
            .map_err(|e| ProxyError::Format(format!("record at byte {pos}: {}", e.at(start))))?;
        out.push(record);
        pos = start + len as usize;
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<RecordedExchange>, ProxyError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_trace(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(seq: u64) -> RecordedExchange {
        RecordedExchange {
            sequence_no: seq,
            timestamp_ms: 1_742_169_600_000 + seq,
            method: "POST".into(),
            path: "/aweme/v1/aweme/stats?origin=fyp".into(),
            request_headers: vec![("X-FL-Account-Id".into(), "u1".into()), ("Empty".into(), String::new())],
            request_body: vec![0, 1, 2, 255],
            response_status: 200,
            response_body: vec![8, 1],
        }
    }

    #[test]
    fn empty_trace_has_valid_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.fltrace");
        TraceWriter::create(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 10);
        assert_eq!(&bytes[..8], TRACE_MAGIC);
        assert!(read_trace(&path).unwrap().is_empty());
    }

    #[test]
    fn records_round_trip_with_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fltrace");
        let xs: Vec<_> = (1..=5).map(sample).collect();
        write_trace(&path, &xs[..3]).unwrap();
        let mut w = TraceWriter::append_to(&path).unwrap();
        for x in &xs[3..] {
            w.append(x).unwrap();
        }
        drop(w);
        assert_eq!(read_trace(&path).unwrap(), xs);

        let bytes = std::fs::read(&path).unwrap();
        let index = std::fs::read_to_string(index_path(&path)).unwrap();
        let rows: Vec<&str> = index.lines().skip(1).collect();
        assert_eq!(rows.len(), 5);
        for (row, x) in rows.iter().zip(&xs) {
            let cols: Vec<&str> = row.split('\t').collect();
            let (off, len): (usize, usize) = (cols[1].parse().unwrap(), cols[2].parse().unwrap());
            assert_eq!(decode_exchange(&bytes[off + 4..off + len]).unwrap(), *x);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(parse_trace(b"NOTTRACE\x01\x00").is_err());
        assert!(parse_trace(b"FLTRACE\0\x02\x00").is_err());
        let mut bytes = TRACE_MAGIC.to_vec();
        bytes.extend_from_slice(&TRACE_VERSION.to_le_bytes());
        let record = encode_exchange(&sample(1));
        bytes.extend_from_slice(&(record.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&record[..record.len() - 1]);
        assert!(parse_trace(&bytes).is_err());
    }
}
