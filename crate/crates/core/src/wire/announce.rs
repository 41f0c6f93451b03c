//! Tracker announce: the HTTP GET request line and the bencoded response body.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use percent_encoding::{percent_decode, percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::Serialize;

use super::{decode_compact_peers, encode_compact_peers, Endpoint, InfoHash, PeerId, WireError};
use crate::bencode::{self, BValue};

pub const ANNOUNCE_PATH: &str = "/announce";

/// RFC 3986 unreserved characters stay literal, everything else is %XX.
const QUERY: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AnnounceEvent {
    Started,
    Stopped,
    Completed,
}

impl AnnounceEvent {
    fn as_str(self) -> &'static str {
        match self {
            AnnounceEvent::Started => "started",
            AnnounceEvent::Stopped => "stopped",
            AnnounceEvent::Completed => "completed",
        }
    }

    fn parse(v: &[u8]) -> Option<Option<Self>> {
        match v {
            b"started" => Some(Some(AnnounceEvent::Started)),
            b"stopped" => Some(Some(AnnounceEvent::Stopped)),
            b"completed" => Some(Some(AnnounceEvent::Completed)),
            b"" => Some(None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnounceRequest {
    pub path: String,
    pub info_hash: InfoHash,
    pub peer_id: PeerId,
    pub port: u16,
    /// Raw `ip=` value. `None` when the key is absent; the value may be
    /// empty, garbage, private or public.
    pub ip_field: Option<Vec<u8>>,
    pub uploaded: u64,
    pub downloaded: u64,
    pub left: u64,
    pub event: Option<AnnounceEvent>,
    /// Query keys this codec does not interpret, in arrival order.
    pub extra: Vec<(Vec<u8>, Vec<u8>)>,
}

impl AnnounceRequest {
    pub fn new(info_hash: InfoHash, peer_id: PeerId, port: u16) -> Self {
        AnnounceRequest {
            path: String::from(ANNOUNCE_PATH),
            info_hash,
            peer_id,
            port,
            ip_field: None,
            uploaded: 0,
            downloaded: 0,
            left: 0,
            event: None,
            extra: Vec::new(),
        }
    }

    /// The ip field as classify_ip expects it (absent reads as empty).
    pub fn ip_bytes(&self) -> &[u8] {
        self.ip_field.as_deref().unwrap_or_default()
    }

    /// `GET <path>?<query> HTTP/1.1`
    pub fn encode(&self) -> Vec<u8> {
        let mut q = Vec::with_capacity(160);
        let mut pair = |k: &str, v: &[u8]| {
            if !q.is_empty() {
                q.push(b'&');
            }
            q.extend_from_slice(k.as_bytes());
            q.push(b'=');
            q.extend(percent_encode(v, QUERY).flat_map(str::bytes));
        };
        pair("info_hash", self.info_hash.as_bytes());
        pair("peer_id", self.peer_id.as_bytes());
        pair("port", itoa(u64::from(self.port)).as_bytes());
        if let Some(ip) = &self.ip_field {
            pair("ip", ip);
        }
        pair("uploaded", itoa(self.uploaded).as_bytes());
        pair("downloaded", itoa(self.downloaded).as_bytes());
        pair("left", itoa(self.left).as_bytes());
        if let Some(ev) = self.event {
            pair("event", ev.as_str().as_bytes());
        }
        for (k, v) in &self.extra {
            // Keys were percent-decoded on the way in; re-escape them too.
            if !q.is_empty() {
                q.push(b'&');
            }
            q.extend(percent_encode(k, QUERY).flat_map(str::bytes));
            q.push(b'=');
            q.extend(percent_encode(v, QUERY).flat_map(str::bytes));
        }
        let mut out = Vec::with_capacity(q.len() + self.path.len() + 16);
        out.extend_from_slice(b"GET ");
        out.extend_from_slice(self.path.as_bytes());
        out.push(b'?');
        out.extend_from_slice(&q);
        out.extend_from_slice(b" HTTP/1.1");
        out
    }

    pub fn parse(line: &[u8]) -> Result<Self, WireError> {
        let line = line.strip_suffix(b"\r\n").unwrap_or(line);
        let rest = line.strip_prefix(b"GET ").ok_or(WireError::Malformed("not a GET request line"))?;
        let target = match rest.iter().rposition(|&b| b == b' ') {
            Some(sp) if rest[sp + 1..].starts_with(b"HTTP/") => &rest[..sp],
            Some(_) => return Err(WireError::Malformed("bad HTTP version")),
            None => rest,
        };
        let qmark = target.iter().position(|&b| b == b'?').ok_or(WireError::Malformed("no query string"))?;
        let path = core::str::from_utf8(&target[..qmark]).map_err(|_| WireError::Malformed("non-UTF-8 path"))?;
        if !path.starts_with('/') {
            return Err(WireError::Malformed("path must be absolute"));
        }

        let mut info_hash = None;
        let mut peer_id = None;
        let mut port = None;
        let mut ip_field = None;
        let (mut uploaded, mut downloaded, mut left) = (0, 0, 0);
        let mut event = None;
        let mut extra = Vec::new();

        for part in target[qmark + 1..].split(|&b| b == b'&').filter(|p| !p.is_empty()) {
            let (k, v) = match part.iter().position(|&b| b == b'=') {
                Some(eq) => (&part[..eq], &part[eq + 1..]),
                None => (part, &b""[..]),
            };
            let v: Vec<u8> = percent_decode(v).collect();
            match k {
                b"info_hash" => info_hash = Some(InfoHash::from_slice(&v)?),
                b"peer_id" => peer_id = Some(PeerId::from_slice(&v)?),
                b"port" => {
                    let p = parse_u64(&v).filter(|&p| p <= u64::from(u16::MAX));
                    port = Some(p.ok_or(WireError::Malformed("port out of range"))? as u16);
                }
                b"ip" => ip_field = Some(v),
                b"uploaded" => uploaded = parse_u64(&v).ok_or(WireError::Malformed("bad uploaded"))?,
                b"downloaded" => downloaded = parse_u64(&v).ok_or(WireError::Malformed("bad downloaded"))?,
                b"left" => left = parse_u64(&v).ok_or(WireError::Malformed("bad left"))?,
                b"event" => event = AnnounceEvent::parse(&v).ok_or(WireError::Malformed("unknown event"))?,
                _ => extra.push((percent_decode(k).collect(), v)),
            }
        }

        Ok(AnnounceRequest {
            path: String::from(path),
            info_hash: info_hash.ok_or(WireError::Malformed("missing info_hash"))?,
            peer_id: peer_id.ok_or(WireError::Malformed("missing peer_id"))?,
            port: port.ok_or(WireError::Malformed("missing port"))?,
            ip_field,
            uploaded,
            downloaded,
            left,
            event,
            extra,
        })
    }
}

fn itoa(n: u64) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    let _ = write!(s, "{n}");
    s
}

fn parse_u64(b: &[u8]) -> Option<u64> {
    if b.is_empty() || b.len() > 20 || !b.iter().all(u8::is_ascii_digit) {
        return None;
    }
    core::str::from_utf8(b).ok()?.parse().ok()
}

/// Bencoded tracker reply. Keys other than `interval` and `peers` are kept
/// verbatim so a rewrite of the peer list leaves every other byte alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnounceResponse {
    pub interval: u32,
    pub peers: Vec<Endpoint>,
    pub extra: BTreeMap<Vec<u8>, BValue>,
}

impl AnnounceResponse {
    pub fn new(interval: u32, peers: Vec<Endpoint>) -> Self {
        AnnounceResponse { interval, peers, extra: BTreeMap::new() }
    }

    pub fn to_bvalue(&self) -> Result<BValue, WireError> {
        let mut d = self.extra.clone();
        d.insert(b"interval".to_vec(), BValue::Integer(i64::from(self.interval)));
        d.insert(b"peers".to_vec(), BValue::Bytes(encode_compact_peers(&self.peers)?));
        Ok(BValue::Dict(d))
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        Ok(bencode::encode(&self.to_bvalue()?))
    }

    pub fn parse(body: &[u8]) -> Result<Self, WireError> {
        let BValue::Dict(mut d) = bencode::decode(body)? else {
            return Err(WireError::Malformed("announce response is not a dict"));
        };
        let interval = d
            .remove(&b"interval"[..])
            .and_then(|v| v.as_int())
            .and_then(|i| u32::try_from(i).ok())
            .filter(|&i| i > 0)
            .ok_or(WireError::Malformed("missing or non-positive interval"))?;
        let peers = match d.remove(&b"peers"[..]) {
            Some(BValue::Bytes(b)) => decode_compact_peers(&b)?,
            Some(_) => return Err(WireError::Malformed("peers must be a compact string")),
            None => return Err(WireError::Malformed("missing peers")),
        };
        Ok(AnnounceResponse { interval, peers, extra: d })
    }
}
