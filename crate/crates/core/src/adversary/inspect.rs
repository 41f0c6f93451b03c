//! Passive inspection: reading self-reported addresses out of plaintext
//! announces and extended handshakes.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::net::IpAddr;

use super::{DeanonRecord, Method};
use crate::overlay::{Direction, ExitObservation};
use crate::wire::{
    classify_ip, AnnounceRequest, AnnounceResponse, ExtendedHandshake, Handshake, IpClass, PeerId, HANDSHAKE_LEN,
};

/// What an exit can make of one plaintext payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Announce(AnnounceRequest),
    TrackerReply(AnnounceResponse),
    Handshake(Handshake, Option<ExtendedHandshake>),
    /// A non-tracker HTTP request, with its Host header.
    Http { host: Vec<u8> },
    Other,
}

impl Parsed {
    /// The peer id a client put in its own outgoing message.
    pub fn client_peer_id(&self, direction: Direction) -> Option<PeerId> {
        match (self, direction) {
            (Parsed::Announce(r), Direction::ToDestination) => Some(r.peer_id),
            (Parsed::Handshake(h, _), Direction::ToDestination) => Some(h.peer_id),
            _ => None,
        }
    }
}

fn http_host(payload: &[u8]) -> Option<Vec<u8>> {
    let head = payload.strip_prefix(b"GET ")?;
    let at = head.windows(8).position(|w| w.eq_ignore_ascii_case(b"\r\nHost: "))?;
    let rest = &head[at + 8..];
    let end = rest.iter().position(|&b| b == b'\r').unwrap_or(rest.len());
    Some(rest[..end].to_vec())
}

pub fn parse_payload(direction: Direction, payload: &[u8]) -> Parsed {
    match direction {
        Direction::ToDestination => {
            if payload.starts_with(b"GET ") {
                let line_end = payload.windows(2).position(|w| w == b"\r\n").unwrap_or(payload.len());
                if let Ok(req) = AnnounceRequest::parse(&payload[..line_end]) {
                    return Parsed::Announce(req);
                }
                return http_host(payload).map_or(Parsed::Other, |host| Parsed::Http { host });
            }
            if let Ok(hs) = Handshake::parse(payload) {
                let ext = ExtendedHandshake::parse(&payload[HANDSHAKE_LEN..]).ok().map(|(e, _)| e);
                return Parsed::Handshake(hs, ext);
            }
            Parsed::Other
        }
        Direction::ToClient => {
            if payload.first() == Some(&b'd') {
                if let Ok(resp) = AnnounceResponse::parse(payload) {
                    return Parsed::TrackerReply(resp);
                }
            }
            if let Ok(hs) = Handshake::parse(payload) {
                let ext = ExtendedHandshake::parse(&payload[HANDSHAKE_LEN..]).ok().map(|(e, _)| e);
                return Parsed::Handshake(hs, ext);
            }
            Parsed::Other
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum IpFieldSource {
    Announce,
    ExtHandshake,
}

/// Result of inspecting one control message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inspection {
    pub source: IpFieldSource,
    pub class: IpClass,
    /// Present only for `PublicNonExit`. Never verified.
    pub record: Option<DeanonRecord>,
}

/// Classifies the self-reported address in an announce or extended
/// handshake. `None` for payloads that are neither.
pub fn inspect(obs: &ExitObservation, exit_ips: &BTreeSet<IpAddr>) -> Option<Inspection> {
    let payload = obs.payload.plaintext()?;
    inspect_parsed(obs, &parse_payload(obs.direction, payload), exit_ips)
}

pub(crate) fn inspect_parsed(obs: &ExitObservation, parsed: &Parsed, exit_ips: &BTreeSet<IpAddr>) -> Option<Inspection> {
    if obs.direction != Direction::ToDestination {
        return None;
    }
    let (source, raw, method, peer_id) = match parsed {
        Parsed::Announce(req) => (IpFieldSource::Announce, req.ip_bytes(), Method::InspectionAnnounce, req.peer_id),
        Parsed::Handshake(hs, Some(ext)) => (
            IpFieldSource::ExtHandshake,
            ext.self_ip.as_deref().unwrap_or_default(),
            Method::InspectionExtHandshake,
            hs.peer_id,
        ),
        _ => return None,
    };
    let class = classify_ip(raw, exit_ips);
    let record = (class == IpClass::PublicNonExit).then(|| {
        let ip = core::str::from_utf8(raw).ok().and_then(|s| s.parse().ok()).expect("classified as an address");
        DeanonRecord::new(ip, method, obs.stream_id, Some(peer_id), obs.time)
    });
    Some(Inspection { source, class, record })
}
