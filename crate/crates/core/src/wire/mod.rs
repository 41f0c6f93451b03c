//! Typed codecs for the BitTorrent messages an exit node can see or rewrite.

mod announce;
mod compact;
mod handshake;
mod ids;
mod ip;
mod krpc;

pub use announce::{AnnounceEvent, AnnounceRequest, AnnounceResponse, ANNOUNCE_PATH};
pub use compact::{decode_compact_nodes, decode_compact_peers, encode_compact_nodes, encode_compact_peers};
pub use handshake::{ExtendedHandshake, Handshake, EXTENSION_PROTOCOL_BIT, HANDSHAKE_LEN, PROTOCOL_STRING};
pub use ids::{Endpoint, InfoHash, NodeId, PeerId, CLIENT_CATALOG};
pub use ip::{classify_addr, classify_ip, is_private, IpClass};
pub use krpc::{KrpcKind, KrpcMessage, PeersOrNodes};

use crate::bencode::DecodeError;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("malformed input: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Bencode(#[from] DecodeError),
    #[error("endpoint {0} cannot be carried in compact IPv4 form")]
    NotCompactable(Endpoint),
}
