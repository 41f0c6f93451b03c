//! Canonical bencode.
//!
//! Decoding is strict: dictionary keys must be sorted and unique, integers
//! must not carry leading zeros or a negative zero, and the whole input must
//! be consumed. Anything that decodes therefore re-encodes to the same bytes.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

/// Nesting limit for lists and dicts. Deeper input is rejected rather than
/// risking the stack.
pub const MAX_DEPTH: usize = 512;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BValue {
    Integer(i64),
    Bytes(Vec<u8>),
    List(Vec<BValue>),
    Dict(BTreeMap<Vec<u8>, BValue>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed bencode at offset {offset}: {reason}")]
pub struct DecodeError {
    pub offset: usize,
    pub reason: &'static str,
}

impl BValue {
    pub fn bytes(b: impl Into<Vec<u8>>) -> Self {
        BValue::Bytes(b.into())
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            BValue::Integer(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            BValue::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[BValue]> {
        match self {
            BValue::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_dict(&self) -> Option<&BTreeMap<Vec<u8>, BValue>> {
        match self {
            BValue::Dict(d) => Some(d),
            _ => None,
        }
    }

    /// Looks up `key` if this value is a dict.
    pub fn get(&self, key: &[u8]) -> Option<&BValue> {
        self.as_dict().and_then(|d| d.get(key))
    }

    pub fn encode(&self) -> Vec<u8> {
        encode(self)
    }
}

impl fmt::Debug for BValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BValue::Integer(i) => write!(f, "{i}"),
            BValue::Bytes(b) => match core::str::from_utf8(b) {
                Ok(s) if s.chars().all(|c| !c.is_control()) => write!(f, "{s:?}"),
                _ => {
                    f.write_str("0x")?;
                    for byte in b {
                        write!(f, "{byte:02x}")?;
                    }
                    Ok(())
                }
            },
            BValue::List(l) => f.debug_list().entries(l).finish(),
            BValue::Dict(d) => f
                .debug_map()
                .entries(d.iter().map(|(k, v)| (BValue::Bytes(k.clone()), v)))
                .finish(),
        }
    }
}

impl From<i64> for BValue {
    fn from(i: i64) -> Self {
        BValue::Integer(i)
    }
}

impl From<&[u8]> for BValue {
    fn from(b: &[u8]) -> Self {
        BValue::Bytes(b.to_vec())
    }
}

impl From<&str> for BValue {
    fn from(s: &str) -> Self {
        BValue::Bytes(s.as_bytes().to_vec())
    }
}

pub fn encode(value: &BValue) -> Vec<u8> {
    let mut out = Vec::new();
    encode_into(value, &mut out);
    out
}

pub fn encode_into(value: &BValue, out: &mut Vec<u8>) {
    match value {
        BValue::Integer(i) => {
            out.push(b'i');
            push_decimal_i64(*i, out);
            out.push(b'e');
        }
        BValue::Bytes(b) => encode_bytes(b, out),
        BValue::List(items) => {
            out.push(b'l');
            for item in items {
                encode_into(item, out);
            }
            out.push(b'e');
        }
        BValue::Dict(map) => {
            // BTreeMap iterates in ascending byte order.
            out.push(b'd');
            for (k, v) in map {
                encode_bytes(k, out);
                encode_into(v, out);
            }
            out.push(b'e');
        }
    }
}

fn encode_bytes(b: &[u8], out: &mut Vec<u8>) {
    push_decimal_u64(b.len() as u64, out);
    out.push(b':');
    out.extend_from_slice(b);
}

fn push_decimal_u64(mut n: u64, out: &mut Vec<u8>) {
    let mut buf = [0u8; 20];
    let mut i = buf.len();
    loop {
        i -= 1;
        buf[i] = b'0' + (n % 10) as u8;
        n /= 10;
        if n == 0 {
            break;
        }
    }
    out.extend_from_slice(&buf[i..]);
}

fn push_decimal_i64(n: i64, out: &mut Vec<u8>) {
    if n < 0 {
        out.push(b'-');
    }
    push_decimal_u64(n.unsigned_abs(), out);
}

/// Decodes exactly one value spanning the whole of `data`.
pub fn decode(data: &[u8]) -> Result<BValue, DecodeError> {
    if data.is_empty() {
        return Err(DecodeError { offset: 0, reason: "empty input" });
    }
    let mut d = Decoder { data, pos: 0 };
    let v = d.value(0)?;
    if d.pos != data.len() {
        return Err(d.err("trailing bytes after value"));
    }
    Ok(v)
}

struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Decoder<'_> {
    fn err(&self, reason: &'static str) -> DecodeError {
        DecodeError { offset: self.pos, reason }
    }

    fn peek(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    fn value(&mut self, depth: usize) -> Result<BValue, DecodeError> {
        if depth > MAX_DEPTH {
            return Err(self.err("nesting too deep"));
        }
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'i') => {
                self.pos += 1;
                let n = self.integer(b'e')?;
                Ok(BValue::Integer(n))
            }
            Some(b'l') => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    match self.peek() {
                        None => return Err(self.err("unterminated list")),
                        Some(b'e') => {
                            self.pos += 1;
                            return Ok(BValue::List(items));
                        }
                        Some(_) => items.push(self.value(depth + 1)?),
                    }
                }
            }
            Some(b'd') => {
                self.pos += 1;
                let mut map = BTreeMap::new();
                let mut last: Option<Vec<u8>> = None;
                loop {
                    match self.peek() {
                        None => return Err(self.err("unterminated dict")),
                        Some(b'e') => {
                            self.pos += 1;
                            return Ok(BValue::Dict(map));
                        }
                        Some(b'0'..=b'9') => {
                            let key_at = self.pos;
                            let key = self.byte_string()?;
                            if let Some(prev) = &last {
                                if key == *prev {
                                    return Err(DecodeError { offset: key_at, reason: "duplicate dict key" });
                                }
                                if key < *prev {
                                    return Err(DecodeError { offset: key_at, reason: "dict keys not sorted" });
                                }
                            }
                            let v = self.value(depth + 1)?;
                            last = Some(key.clone());
                            map.insert(key, v);
                        }
                        Some(_) => return Err(self.err("dict key is not a byte string")),
                    }
                }
            }
            Some(b'0'..=b'9') => Ok(BValue::Bytes(self.byte_string()?)),
            Some(b'-') => Err(self.err("negative string length")),
            Some(_) => Err(self.err("unexpected byte")),
        }
    }

    /// Parses a canonical decimal up to `terminator` and consumes it.
    fn integer(&mut self, terminator: u8) -> Result<i64, DecodeError> {
        let start = self.pos;
        let negative = self.peek() == Some(b'-');
        if negative {
            self.pos += 1;
        }
        let digits_at = self.pos;
        while let Some(b'0'..=b'9') = self.peek() {
            self.pos += 1;
        }
        let digits = &self.data[digits_at..self.pos];
        match self.peek() {
            Some(t) if t == terminator => {}
            None => return Err(self.err("unterminated integer")),
            Some(_) => return Err(self.err("invalid digit")),
        }
        if digits.is_empty() {
            return Err(DecodeError { offset: start, reason: "missing digits" });
        }
        if digits[0] == b'0' && (digits.len() > 1 || negative) {
            return Err(DecodeError { offset: start, reason: "non-canonical integer" });
        }
        let mut magnitude: u64 = 0;
        for &d in digits {
            magnitude = magnitude
                .checked_mul(10)
                .and_then(|m| m.checked_add(u64::from(d - b'0')))
                .ok_or(DecodeError { offset: start, reason: "integer out of range" })?;
        }
        let n = if negative {
            if magnitude > i64::MAX as u64 + 1 {
                return Err(DecodeError { offset: start, reason: "integer out of range" });
            }
            (magnitude as i64).wrapping_neg()
        } else {
            i64::try_from(magnitude).map_err(|_| DecodeError { offset: start, reason: "integer out of range" })?
        };
        self.pos += 1;
        Ok(n)
    }

    fn byte_string(&mut self) -> Result<Vec<u8>, DecodeError> {
        let at = self.pos;
        let len = self.integer(b':')?;
        let len = usize::try_from(len).map_err(|_| DecodeError { offset: at, reason: "negative string length" })?;
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.data.len())
            .ok_or(DecodeError { offset: at, reason: "string runs past end of input" })?;
        let out = self.data[self.pos..end].to_vec();
        self.pos = end;
        Ok(out)
    }
}
