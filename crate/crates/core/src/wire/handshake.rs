use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::{InfoHash, PeerId, WireError};
use crate::bencode::{self, BValue};

pub const PROTOCOL_STRING: &[u8; 19] = b"BitTorrent protocol";
pub const HANDSHAKE_LEN: usize = 68;
/// Reserved bit 20 (byte 5, 0x10): extension protocol support.
pub const EXTENSION_PROTOCOL_BIT: u64 = 0x0000_0000_0010_0000;

const EXTENDED_MESSAGE_ID: u8 = 20;
const EXTENDED_HANDSHAKE_ID: u8 = 0;

/// The fixed-layout peer wire handshake.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handshake {
    pub info_hash: InfoHash,
    pub peer_id: PeerId,
    pub extension_bits: u64,
}

impl Handshake {
    pub fn new(info_hash: InfoHash, peer_id: PeerId, extension_bits: u64) -> Self {
        Handshake { info_hash, peer_id, extension_bits }
    }

    pub fn supports_extensions(&self) -> bool {
        self.extension_bits & EXTENSION_PROTOCOL_BIT != 0
    }

    pub fn encode(&self) -> [u8; HANDSHAKE_LEN] {
        let mut out = [0u8; HANDSHAKE_LEN];
        out[0] = 19;
        out[1..20].copy_from_slice(PROTOCOL_STRING);
        out[20..28].copy_from_slice(&self.extension_bits.to_be_bytes());
        out[28..48].copy_from_slice(self.info_hash.as_bytes());
        out[48..68].copy_from_slice(self.peer_id.as_bytes());
        out
    }

    /// Parses the first 68 octets of `data`. Extra octets belong to the
    /// messages that follow and are ignored here.
    pub fn parse(data: &[u8]) -> Result<Self, WireError> {
        if data.len() < HANDSHAKE_LEN {
            return Err(WireError::Malformed("handshake truncated"));
        }
        if data[0] != 19 || &data[1..20] != PROTOCOL_STRING {
            return Err(WireError::Malformed("wrong protocol string"));
        }
        let mut reserved = [0u8; 8];
        reserved.copy_from_slice(&data[20..28]);
        Ok(Handshake {
            extension_bits: u64::from_be_bytes(reserved),
            info_hash: InfoHash::from_slice(&data[28..48])?,
            peer_id: PeerId::from_slice(&data[48..68])?,
        })
    }
}

/// Extension-protocol handshake payload.
///
/// The self-reported address is carried textually under the `ip` key so the
/// same classifier applies to it and to the announce `ip=` field.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExtendedHandshake {
    pub listen_port: Option<u16>,
    pub self_ip: Option<Vec<u8>>,
    pub client_version: Option<String>,
    /// The `m` dictionary: extension name to local message id.
    pub extensions: BTreeMap<Vec<u8>, BValue>,
}

impl ExtendedHandshake {
    pub const PORT_KEY: &'static [u8] = b"p";
    pub const IP_KEY: &'static [u8] = b"ip";
    pub const VERSION_KEY: &'static [u8] = b"v";
    pub const EXTENSIONS_KEY: &'static [u8] = b"m";

    pub fn to_bvalue(&self) -> BValue {
        let mut d = BTreeMap::new();
        d.insert(Self::EXTENSIONS_KEY.to_vec(), BValue::Dict(self.extensions.clone()));
        if let Some(p) = self.listen_port {
            d.insert(Self::PORT_KEY.to_vec(), BValue::Integer(i64::from(p)));
        }
        if let Some(ip) = &self.self_ip {
            d.insert(Self::IP_KEY.to_vec(), BValue::Bytes(ip.clone()));
        }
        if let Some(v) = &self.client_version {
            d.insert(Self::VERSION_KEY.to_vec(), BValue::Bytes(v.as_bytes().to_vec()));
        }
        BValue::Dict(d)
    }

    /// Length-prefixed extended message (id 20, extended id 0) with the
    /// bencoded dict as payload.
    pub fn encode(&self) -> Vec<u8> {
        let payload = bencode::encode(&self.to_bvalue());
        let len = u32::try_from(payload.len() + 2).expect("extended handshake larger than 4 GiB");
        let mut out = Vec::with_capacity(payload.len() + 6);
        out.extend_from_slice(&len.to_be_bytes());
        out.push(EXTENDED_MESSAGE_ID);
        out.push(EXTENDED_HANDSHAKE_ID);
        out.extend_from_slice(&payload);
        out
    }

    /// Parses one complete extended handshake message; returns it and the
    /// number of octets consumed.
    pub fn parse(data: &[u8]) -> Result<(Self, usize), WireError> {
        if data.len() < 6 {
            return Err(WireError::Malformed("extended message truncated"));
        }
        let len = u32::from_be_bytes([data[0], data[1], data[2], data[3]]) as usize;
        if len < 2 {
            return Err(WireError::Malformed("extended message too short"));
        }
        let end = 4usize.checked_add(len).filter(|&e| e <= data.len());
        let end = end.ok_or(WireError::Malformed("extended message truncated"))?;
        if data[4] != EXTENDED_MESSAGE_ID || data[5] != EXTENDED_HANDSHAKE_ID {
            return Err(WireError::Malformed("not an extended handshake"));
        }
        let BValue::Dict(d) = bencode::decode(&data[6..end])? else {
            return Err(WireError::Malformed("extension payload is not a dict"));
        };
        let listen_port = match d.get(Self::PORT_KEY) {
            None => None,
            Some(v) => Some(
                v.as_int()
                    .and_then(|p| u16::try_from(p).ok())
                    .ok_or(WireError::Malformed("listen port out of range"))?,
            ),
        };
        let self_ip = match d.get(Self::IP_KEY) {
            None => None,
            Some(v) => Some(v.as_bytes().ok_or(WireError::Malformed("ip must be a string"))?.to_vec()),
        };
        let client_version = match d.get(Self::VERSION_KEY) {
            None => None,
            Some(v) => {
                let b = v.as_bytes().ok_or(WireError::Malformed("v must be a string"))?;
                Some(String::from(core::str::from_utf8(b).map_err(|_| WireError::Malformed("v is not UTF-8"))?))
            }
        };
        let extensions = match d.get(Self::EXTENSIONS_KEY) {
            None => BTreeMap::new(),
            Some(BValue::Dict(m)) => m.clone(),
            Some(_) => return Err(WireError::Malformed("m must be a dict")),
        };
        Ok((ExtendedHandshake { listen_port, self_ip, client_version, extensions }, end))
    }
}
