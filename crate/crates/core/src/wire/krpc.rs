//! KRPC: the bencoded query/response protocol of the mainline DHT.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::{decode_compact_nodes, decode_compact_peers, encode_compact_nodes, encode_compact_peers};
use super::{Endpoint, InfoHash, NodeId, WireError};
use crate::bencode::{self, BValue};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PeersOrNodes {
    Peers(Vec<Endpoint>),
    Nodes(Vec<(NodeId, Endpoint)>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KrpcKind {
    FindNodeQuery { target: NodeId },
    FindNodeResponse { nodes: Vec<(NodeId, Endpoint)> },
    GetPeersQuery { info_hash: InfoHash },
    GetPeersResponse { token: Vec<u8>, result: PeersOrNodes },
    AnnouncePeerQuery { info_hash: InfoHash, port: u16, token: Vec<u8> },
    AnnouncePeerResponse,
    Error { code: i64, message: String },
}

impl KrpcKind {
    pub fn is_query(&self) -> bool {
        matches!(
            self,
            KrpcKind::FindNodeQuery { .. } | KrpcKind::GetPeersQuery { .. } | KrpcKind::AnnouncePeerQuery { .. }
        )
    }
}

/// One KRPC datagram. `sender` is the querying or responding node's id and
/// is `None` exactly for error messages, which carry no id on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KrpcMessage {
    pub transaction_id: Vec<u8>,
    pub sender: Option<NodeId>,
    pub kind: KrpcKind,
}

fn key(k: &[u8]) -> Vec<u8> {
    k.to_vec()
}

impl KrpcMessage {
    pub fn query(transaction_id: Vec<u8>, sender: NodeId, kind: KrpcKind) -> Self {
        KrpcMessage { transaction_id, sender: Some(sender), kind }
    }

    pub fn error(transaction_id: Vec<u8>, code: i64, message: impl Into<String>) -> Self {
        KrpcMessage { transaction_id, sender: None, kind: KrpcKind::Error { code, message: message.into() } }
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut top = BTreeMap::new();
        top.insert(key(b"t"), BValue::Bytes(self.transaction_id.clone()));
        let mut body = BTreeMap::new();
        let id = |body: &mut BTreeMap<Vec<u8>, BValue>| -> Result<(), WireError> {
            let id = self.sender.ok_or(WireError::Malformed("query or response without sender id"))?;
            body.insert(key(b"id"), BValue::Bytes(id.as_bytes().to_vec()));
            Ok(())
        };
        let query = |top: &mut BTreeMap<Vec<u8>, BValue>, name: &str, body: BTreeMap<Vec<u8>, BValue>| {
            top.insert(key(b"y"), "q".into());
            top.insert(key(b"q"), name.into());
            top.insert(key(b"a"), BValue::Dict(body));
        };
        let response = |top: &mut BTreeMap<Vec<u8>, BValue>, body: BTreeMap<Vec<u8>, BValue>| {
            top.insert(key(b"y"), "r".into());
            top.insert(key(b"r"), BValue::Dict(body));
        };
        match &self.kind {
            KrpcKind::FindNodeQuery { target } => {
                id(&mut body)?;
                body.insert(key(b"target"), BValue::Bytes(target.as_bytes().to_vec()));
                query(&mut top, "find_node", body);
            }
            KrpcKind::GetPeersQuery { info_hash } => {
                id(&mut body)?;
                body.insert(key(b"info_hash"), BValue::Bytes(info_hash.as_bytes().to_vec()));
                query(&mut top, "get_peers", body);
            }
            KrpcKind::AnnouncePeerQuery { info_hash, port, token } => {
                id(&mut body)?;
                body.insert(key(b"info_hash"), BValue::Bytes(info_hash.as_bytes().to_vec()));
                body.insert(key(b"port"), BValue::Integer(i64::from(*port)));
                body.insert(key(b"token"), BValue::Bytes(token.clone()));
                query(&mut top, "announce_peer", body);
            }
            KrpcKind::FindNodeResponse { nodes } => {
                id(&mut body)?;
                body.insert(key(b"nodes"), BValue::Bytes(encode_compact_nodes(nodes)?));
                response(&mut top, body);
            }
            KrpcKind::GetPeersResponse { token, result } => {
                id(&mut body)?;
                body.insert(key(b"token"), BValue::Bytes(token.clone()));
                match result {
                    PeersOrNodes::Peers(peers) => {
                        let values = peers
                            .iter()
                            .map(|p| encode_compact_peers(core::slice::from_ref(p)).map(BValue::Bytes))
                            .collect::<Result<Vec<_>, _>>()?;
                        body.insert(key(b"values"), BValue::List(values));
                    }
                    PeersOrNodes::Nodes(nodes) => {
                        body.insert(key(b"nodes"), BValue::Bytes(encode_compact_nodes(nodes)?));
                    }
                }
                response(&mut top, body);
            }
            KrpcKind::AnnouncePeerResponse => {
                id(&mut body)?;
                response(&mut top, body);
            }
            KrpcKind::Error { code, message } => {
                if self.sender.is_some() {
                    return Err(WireError::Malformed("error messages carry no sender id"));
                }
                top.insert(key(b"y"), "e".into());
                top.insert(key(b"e"), BValue::List(alloc::vec![BValue::Integer(*code), message.as_str().into()]));
            }
        }
        Ok(bencode::encode(&BValue::Dict(top)))
    }

    pub fn parse(data: &[u8]) -> Result<Self, WireError> {
        let top = bencode::decode(data)?;
        let top = top.as_dict().ok_or(WireError::Malformed("KRPC message is not a dict"))?;
        let bytes_of = |d: &BTreeMap<Vec<u8>, BValue>, k: &'static [u8], what: &'static str| {
            d.get(k).and_then(BValue::as_bytes).map(<[u8]>::to_vec).ok_or(WireError::Malformed(what))
        };
        let transaction_id = bytes_of(top, b"t", "missing transaction id")?;
        let y = bytes_of(top, b"y", "missing message type")?;
        let body = |k: &'static [u8]| {
            top.get(k).and_then(BValue::as_dict).ok_or(WireError::Malformed("missing argument dict"))
        };
        let sender = |d: &BTreeMap<Vec<u8>, BValue>| NodeId::from_slice(&bytes_of(d, b"id", "missing node id")?);
        let info_hash = |d: &BTreeMap<Vec<u8>, BValue>| InfoHash::from_slice(&bytes_of(d, b"info_hash", "missing info_hash")?);

        let (sender, kind) = match y.as_slice() {
            b"q" => {
                let a = body(b"a")?;
                let kind = match bytes_of(top, b"q", "missing query name")?.as_slice() {
                    b"find_node" => KrpcKind::FindNodeQuery {
                        target: NodeId::from_slice(&bytes_of(a, b"target", "missing target")?)?,
                    },
                    b"get_peers" => KrpcKind::GetPeersQuery { info_hash: info_hash(a)? },
                    b"announce_peer" => KrpcKind::AnnouncePeerQuery {
                        info_hash: info_hash(a)?,
                        port: a
                            .get(&b"port"[..])
                            .and_then(BValue::as_int)
                            .and_then(|p| u16::try_from(p).ok())
                            .ok_or(WireError::Malformed("bad announce port"))?,
                        token: bytes_of(a, b"token", "missing token")?,
                    },
                    _ => return Err(WireError::Malformed("unknown query")),
                };
                (Some(sender(a)?), kind)
            }
            b"r" => {
                let r = body(b"r")?;
                let token = r.get(&b"token"[..]).map(|t| t.as_bytes().map(<[u8]>::to_vec));
                let token = match token {
                    Some(None) => return Err(WireError::Malformed("token must be a string")),
                    Some(Some(t)) => Some(t),
                    None => None,
                };
                let nodes = match r.get(&b"nodes"[..]) {
                    Some(BValue::Bytes(b)) => Some(decode_compact_nodes(b)?),
                    Some(_) => return Err(WireError::Malformed("nodes must be a string")),
                    None => None,
                };
                let kind = if let Some(values) = r.get(&b"values"[..]) {
                    let values = values.as_list().ok_or(WireError::Malformed("values must be a list"))?;
                    let mut peers = Vec::with_capacity(values.len());
                    for v in values {
                        let b = v.as_bytes().filter(|b| b.len() == 6);
                        peers.extend(decode_compact_peers(b.ok_or(WireError::Malformed("bad peer value"))?)?);
                    }
                    let token = token.ok_or(WireError::Malformed("get_peers response without token"))?;
                    KrpcKind::GetPeersResponse { token, result: PeersOrNodes::Peers(peers) }
                } else {
                    match (nodes, token) {
                        (Some(nodes), Some(token)) => KrpcKind::GetPeersResponse { token, result: PeersOrNodes::Nodes(nodes) },
                        (Some(nodes), None) => KrpcKind::FindNodeResponse { nodes },
                        (None, None) => KrpcKind::AnnouncePeerResponse,
                        (None, Some(_)) => return Err(WireError::Malformed("token without peers or nodes")),
                    }
                };
                (Some(sender(r)?), kind)
            }
            b"e" => {
                let e = top.get(&b"e"[..]).and_then(BValue::as_list).ok_or(WireError::Malformed("missing error list"))?;
                let [code, msg] = e else {
                    return Err(WireError::Malformed("error list must have two entries"));
                };
                let code = code.as_int().ok_or(WireError::Malformed("error code must be an integer"))?;
                let msg = msg.as_bytes().ok_or(WireError::Malformed("error text must be a string"))?;
                let message = String::from(core::str::from_utf8(msg).map_err(|_| WireError::Malformed("error text is not UTF-8"))?);
                (None, KrpcKind::Error { code, message })
            }
            _ => return Err(WireError::Malformed("unknown message type")),
        };
        Ok(KrpcMessage { transaction_id, sender, kind })
    }
}
