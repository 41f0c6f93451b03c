//! Tracker-response hijacking.
//!
//! The exit puts the attacker's listener at the head of the peer list in a
//! tracker reply. A victim that then connects to the listener reveals the
//! address it connects from, and its handshake names the torrent and peer id
//! that tie the connection back to the rewritten reply.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::net::IpAddr;

use serde::Serialize;

use super::{DeanonRecord, Method};
use crate::overlay::{ExitObservation, StreamId};
use crate::wire::{AnnounceResponse, Endpoint, ExtendedHandshake, Handshake, InfoHash, PeerId, EXTENSION_PROTOCOL_BIT};
use crate::SimTime;

/// BitTorrent `piece` message id.
pub const PIECE_MESSAGE_ID: u8 = 7;

/// Puts `listener` at position 0, evicting whatever was there. An empty
/// list grows to one entry; any copy of the listener elsewhere is dropped
/// so it appears exactly once.
pub fn rewrite_peers(peers: &mut Vec<Endpoint>, listener: Endpoint) {
    let before = peers.len();
    peers.retain(|p| *p != listener);
    if peers.len() < before {
        peers.insert(0, listener);
    } else if peers.is_empty() {
        peers.push(listener);
    } else {
        peers[0] = listener;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pending {
    stream: StreamId,
    time: SimTime,
}

/// One connection to the listener that matched a rewritten reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HijackConnection {
    pub time: SimTime,
    pub info_hash: InfoHash,
    pub peer_id: PeerId,
    /// The connection came from an exit relay, so the victim routes peer
    /// traffic through the overlay too.
    pub via_tor: bool,
    /// The victim went on to send a piece.
    pub piece_confirmed: bool,
}

#[derive(Debug)]
pub struct Hijacker {
    listener: Endpoint,
    peer_id: PeerId,
    ttl: SimTime,
    /// Announces seen on a stream whose reply has not come back yet.
    requests: BTreeMap<StreamId, (InfoHash, PeerId)>,
    pending: BTreeMap<(InfoHash, PeerId), Pending>,
    connections: Vec<HijackConnection>,
    open: BTreeMap<Endpoint, usize>,
}

impl Hijacker {
    pub fn new(listener: Endpoint, peer_id: PeerId, ttl: SimTime) -> Self {
        Hijacker {
            listener,
            peer_id,
            ttl,
            requests: BTreeMap::new(),
            pending: BTreeMap::new(),
            connections: Vec::new(),
            open: BTreeMap::new(),
        }
    }

    pub fn listener(&self) -> Endpoint {
        self.listener
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn connections(&self) -> &[HijackConnection] {
        &self.connections
    }

    pub fn into_connections(self) -> Vec<HijackConnection> {
        self.connections
    }

    pub fn note_request(&mut self, stream: StreamId, info_hash: InfoHash, peer_id: PeerId) {
        self.requests.insert(stream, (info_hash, peer_id));
    }

    /// Rewrites the tracker reply carried by `obs`, returning the new body.
    /// Replies on streams with no observed announce pass through untouched.
    pub fn rewrite(&mut self, obs: &ExitObservation, resp: &AnnounceResponse) -> Option<Vec<u8>> {
        let (info_hash, peer_id) = self.requests.remove(&obs.stream_id)?;
        let mut resp = resp.clone();
        rewrite_peers(&mut resp.peers, self.listener);
        let body = resp.encode().ok()?;
        self.pending.insert(
            (info_hash, peer_id),
            Pending { stream: obs.stream_id, time: obs.time },
        );
        Some(body)
    }

    pub fn expire(&mut self, now: SimTime) {
        let ttl = self.ttl;
        self.pending.retain(|_, p| now.saturating_sub(p.time) <= ttl);
        // A reply that never came back leaves a stale request behind.
        if self.requests.len() > 4096 {
            let keep: BTreeSet<StreamId> = self.requests.keys().rev().take(1024).copied().collect();
            self.requests.retain(|s, _| keep.contains(s));
        }
    }

    /// Handles the first bytes of an incoming connection. Returns a claim
    /// when the connection matches a rewritten reply and does not come from
    /// an exit, plus the listener's own handshake.
    pub fn accept(&mut self, src: Endpoint, data: &[u8], now: SimTime, exit_ips: &BTreeSet<IpAddr>) -> (Option<DeanonRecord>, Vec<u8>) {
        let Ok(hs) = Handshake::parse(data) else {
            return (None, Vec::new());
        };
        let mut reply = Handshake::new(hs.info_hash, self.peer_id, EXTENSION_PROTOCOL_BIT).encode().to_vec();
        reply.extend(ExtendedHandshake::default().encode());
        let key = (hs.info_hash, hs.peer_id);
        let Some(p) = self.pending.get(&key).copied() else {
            return (None, reply);
        };
        if now.saturating_sub(p.time) > self.ttl {
            self.pending.remove(&key);
            return (None, reply);
        }
        self.pending.remove(&key);
        let via_tor = exit_ips.contains(&src.ip);
        self.open.insert(src, self.connections.len());
        self.connections.push(HijackConnection {
            time: now,
            info_hash: hs.info_hash,
            peer_id: hs.peer_id,
            via_tor,
            piece_confirmed: false,
        });
        let record = (!via_tor).then(|| DeanonRecord::new(src.ip, Method::Hijack, p.stream, Some(hs.peer_id), now));
        (record, reply)
    }

    /// Marks the connection from `src` as confirmed once it sends a piece.
    pub fn receive(&mut self, src: Endpoint, data: &[u8]) {
        let is_piece = data.len() >= 5 && data[4] == PIECE_MESSAGE_ID;
        if let (true, Some(&i)) = (is_piece, self.open.get(&src)) {
            self.connections[i].piece_confirmed = true;
            self.open.remove(&src);
        }
    }
}

/// `piece` message carrying one small block, the in-simulation stand-in for
/// content exchange.
pub fn piece_token(index: u32, block: &[u8]) -> Vec<u8> {
    let len = u32::try_from(9 + block.len()).expect("small block");
    let mut out = Vec::with_capacity(13 + block.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.push(PIECE_MESSAGE_ID);
    out.extend_from_slice(&index.to_be_bytes());
    out.extend_from_slice(&0u32.to_be_bytes());
    out.extend_from_slice(block);
    out
}
