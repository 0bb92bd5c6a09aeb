//! Protobuf-style tag-length-value primitives.
//!
//! A field key is `varint(field_number << 3 | wire_type)`. Only wire types
//! 0 (varint) and 2 (length-delimited) are emitted; 1 (fixed64) and 5
//! (fixed32) are understood when skipping unknown fields.

use thiserror::Error;

pub const WIRE_VARINT: u8 = 0;
pub const WIRE_FIXED64: u8 = 1;
pub const WIRE_LEN: u8 = 2;
pub const WIRE_FIXED32: u8 = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated input at byte {offset}")]
    Truncated { offset: usize },
    #[error("varint overflow at byte {offset}")]
    VarintOverflow { offset: usize },
    #[error("unsupported wire type {wire_type} at byte {offset}")]
    WireType { wire_type: u8, offset: usize },
    #[error("field {field} has wrong wire type {wire_type} at byte {offset}")]
    UnexpectedWireType { field: u32, wire_type: u8, offset: usize },
    #[error("invalid utf-8 in field {field} at byte {offset}")]
    Utf8 { field: u32, offset: usize },
    #[error("invalid value for field {field} at byte {offset}: {reason}")]
    Invalid { field: u32, offset: usize, reason: String },
    #[error("required field {0} missing")]
    Missing(&'static str),
}

impl DecodeError {
    /// Shifts every byte offset by `base`; used when a nested message error
    /// bubbles up to its parent.
    pub fn at(self, base: usize) -> Self {
        match self {
            DecodeError::Truncated { offset } => DecodeError::Truncated { offset: offset + base },
            DecodeError::VarintOverflow { offset } => DecodeError::VarintOverflow { offset: offset + base },
            DecodeError::WireType { wire_type, offset } => DecodeError::WireType { wire_type, offset: offset + base },
            DecodeError::UnexpectedWireType { field, wire_type, offset } => {
                DecodeError::UnexpectedWireType { field, wire_type, offset: offset + base }
            }
            DecodeError::Utf8 { field, offset } => DecodeError::Utf8 { field, offset: offset + base },
            DecodeError::Invalid { field, offset, reason } => {
                DecodeError::Invalid { field, offset: offset + base, reason }
            }
            DecodeError::Missing(f) => DecodeError::Missing(f),
        }
    }
}

pub fn put_varint(buf: &mut Vec<u8>, mut value: u64) {
    while value >= 0x80 {
        buf.push((value as u8) | 0x80);
        value >>= 7;
    }
    buf.push(value as u8);
}

/// Decodes a varint at the start of `data`, returning `(value, bytes_read)`.
pub fn get_varint(data: &[u8]) -> Result<(u64, usize), DecodeError> {
    let mut value = 0u64;
    for (i, &byte) in data.iter().enumerate().take(10) {
        let chunk = (byte & 0x7f) as u64;
        if i == 9 && byte > 1 {
            return Err(DecodeError::VarintOverflow { offset: 0 });
        }
        value |= chunk << (7 * i);
        if byte & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    if data.len() >= 10 {
        Err(DecodeError::VarintOverflow { offset: 0 })
    } else {
        Err(DecodeError::Truncated { offset: data.len() })
    }
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(&mut self, field: u32, wire_type: u8) {
        put_varint(&mut self.buf, ((field as u64) << 3) | wire_type as u64);
    }

    pub fn varint(&mut self, field: u32, value: u64) -> &mut Self {
        self.key(field, WIRE_VARINT);
        put_varint(&mut self.buf, value);
        self
    }

    pub fn bool(&mut self, field: u32, value: bool) -> &mut Self {
        self.varint(field, value as u64)
    }

    pub fn bytes(&mut self, field: u32, value: &[u8]) -> &mut Self {
        self.key(field, WIRE_LEN);
        put_varint(&mut self.buf, value.len() as u64);
        self.buf.extend_from_slice(value);
        self
    }

    pub fn string(&mut self, field: u32, value: &str) -> &mut Self {
        self.bytes(field, value.as_bytes())
    }

    pub fn message(&mut self, field: u32, f: impl FnOnce(&mut Encoder)) -> &mut Self {
        let mut inner = Encoder::new();
        f(&mut inner);
        self.bytes(field, &inner.buf)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// A decoded field value borrowed from the input.
#[derive(Debug, Clone, Copy)]
pub enum Value<'a> {
    Varint(u64),
    Bytes(&'a [u8]),
    Fixed64(u64),
    Fixed32(u32),
}

#[derive(Debug, Clone, Copy)]
pub struct Field<'a> {
    pub number: u32,
    pub value: Value<'a>,
    /// Byte offset of the field key within the message being decoded.
    pub offset: usize,
    /// Byte offset of the value payload.
    pub value_offset: usize,
}

impl<'a> Field<'a> {
    pub fn as_u64(&self) -> Result<u64, DecodeError> {
        match self.value {
            Value::Varint(v) => Ok(v),
            _ => Err(self.wrong_type(WIRE_VARINT)),
        }
    }

    pub fn as_u32(&self) -> Result<u32, DecodeError> {
        let v = self.as_u64()?;
        u32::try_from(v).map_err(|_| DecodeError::Invalid {
            field: self.number,
            offset: self.value_offset,
            reason: format!("{v} exceeds u32"),
        })
    }

    pub fn as_bool(&self) -> Result<bool, DecodeError> {
        match self.as_u64()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(DecodeError::Invalid {
                field: self.number,
                offset: self.value_offset,
                reason: format!("bool value {v}"),
            }),
        }
    }

    pub fn as_bytes(&self) -> Result<&'a [u8], DecodeError> {
        match self.value {
            Value::Bytes(b) => Ok(b),
            _ => Err(self.wrong_type(WIRE_LEN)),
        }
    }

    pub fn as_string(&self) -> Result<String, DecodeError> {
        let bytes = self.as_bytes()?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| DecodeError::Utf8 { field: self.number, offset: self.value_offset })
    }

    /// Decodes a nested message, translating inner offsets to this buffer.
    pub fn as_message<T>(&self, decode: impl FnOnce(&[u8]) -> Result<T, DecodeError>) -> Result<T, DecodeError> {
        let bytes = self.as_bytes()?;
        decode(bytes).map_err(|e| e.at(self.value_offset))
    }

    fn wrong_type(&self, _expected: u8) -> DecodeError {
        let wire_type = match self.value {
            Value::Varint(_) => WIRE_VARINT,
            Value::Bytes(_) => WIRE_LEN,
            Value::Fixed64(_) => WIRE_FIXED64,
            Value::Fixed32(_) => WIRE_FIXED32,
        };
        DecodeError::UnexpectedWireType { field: self.number, wire_type, offset: self.offset }
    }
}

/// Iterates the fields of one message. Callers match on `number` and
/// ignore anything they do not know.
pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn varint(&mut self) -> Result<u64, DecodeError> {
        let start = self.pos;
        let (v, n) = get_varint(&self.data[self.pos..]).map_err(|e| e.at(start))?;
        self.pos += n;
        Ok(v)
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let out = &self.data[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(DecodeError::Truncated { offset: self.data.len() }),
        }
    }

    pub fn next_field(&mut self) -> Option<Result<Field<'a>, DecodeError>> {
        if self.pos >= self.data.len() {
            return None;
        }
        Some(self.read_field())
    }

    fn read_field(&mut self) -> Result<Field<'a>, DecodeError> {
        let offset = self.pos;
        let key = self.varint()?;
        let wire_type = (key & 0x7) as u8;
        let number = u32::try_from(key >> 3).ok().filter(|&n| n > 0).ok_or(DecodeError::Invalid {
            field: 0,
            offset,
            reason: "bad field number".into(),
        })?;
        let value_offset = self.pos;
        let value = match wire_type {
            WIRE_VARINT => Value::Varint(self.varint()?),
            WIRE_LEN => {
                let len = self.varint()?;
                let len = usize::try_from(len).map_err(|_| DecodeError::Truncated { offset: self.data.len() })?;
                let start = self.pos;
                let bytes = self.take(len)?;
                return Ok(Field { number, value: Value::Bytes(bytes), offset, value_offset: start });
            }
            WIRE_FIXED64 => {
                let b = self.take(8)?;
                Value::Fixed64(u64::from_le_bytes(b.try_into().expect("8 bytes")))
            }
            WIRE_FIXED32 => {
                let b = self.take(4)?;
                Value::Fixed32(u32::from_le_bytes(b.try_into().expect("4 bytes")))
            }
            other => return Err(DecodeError::WireType { wire_type: other, offset }),
        };
        Ok(Field { number, value, offset, value_offset })
    }
}

impl<'a> Iterator for Decoder<'a> {
    type Item = Result<Field<'a>, DecodeError>;

    fn next(&mut self) -> Option<Self::Item> {
        let item = self.next_field();
        if matches!(item, Some(Err(_))) {
            // Stop after the first error.
            self.pos = self.data.len();
        }
        item
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn varint_known_encodings() {
        let mut buf = Vec::new();
        put_varint(&mut buf, 300);
        assert_eq!(buf, [0xac, 0x02]);
        assert_eq!(get_varint(&buf).unwrap(), (300, 2));
        let mut buf = Vec::new();
        put_varint(&mut buf, u64::MAX);
        assert_eq!(buf.len(), 10);
        assert_eq!(get_varint(&buf).unwrap(), (u64::MAX, 10));
    }

    #[test]
    fn varint_errors() {
        assert_eq!(get_varint(&[0x80, 0x80]), Err(DecodeError::Truncated { offset: 2 }));
        assert!(matches!(get_varint(&[0xff; 11]), Err(DecodeError::VarintOverflow { .. })));
    }

    #[test]
    fn truncated_length_reports_offset() {
        let mut e = Encoder::new();
        e.string(1, "hello");
        let bytes = e.finish();
        let err = Decoder::new(&bytes[..4]).next().unwrap().unwrap_err();
        assert_eq!(err, DecodeError::Truncated { offset: 4 });
    }

    #[test]
    fn skips_fixed_width_fields() {
        let mut bytes = vec![(7 << 3) | WIRE_FIXED64];
        bytes.extend_from_slice(&42u64.to_le_bytes());
        bytes.push((8 << 3) | WIRE_FIXED32);
        bytes.extend_from_slice(&7u32.to_le_bytes());
        let fields: Vec<_> = Decoder::new(&bytes).collect::<Result<_, _>>().unwrap();
        assert_eq!(fields.len(), 2);
        assert!(matches!(fields[0].value, Value::Fixed64(42)));
        assert!(matches!(fields[1].value, Value::Fixed32(7)));
    }

    #[test]
    fn rejects_unknown_wire_type() {
        let bytes = [(1 << 3) | 3];
        let err = Decoder::new(&bytes).next().unwrap().unwrap_err();
        assert_eq!(err, DecodeError::WireType { wire_type: 3, offset: 0 });
    }

    proptest! {
        #[test]
        fn varint_round_trip(v in any::<u64>()) {
            let mut buf = Vec::new();
            put_varint(&mut buf, v);
            prop_assert_eq!(get_varint(&buf).unwrap(), (v, buf.len()));
        }

        #[test]
        fn decoder_never_panics(data in proptest::collection::vec(any::<u8>(), 0..256)) {
            for field in Decoder::new(&data) {
                if field.is_err() { break; }
            }
        }
    }
}
