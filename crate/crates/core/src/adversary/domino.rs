//! Domino linking: spreading a de-anonymized stream's address to the
//! streams that can be tied to it.
//!
//! * intra: every stream multiplexed on the same circuit;
//! * inter by peer id: streams on other circuits whose BitTorrent messages
//!   carry a peer id already bound to an address;
//! * inter by endpoint: streams on other circuits heading, within the
//!   window, to an endpoint from a tracker list seen on a linked circuit.
//!
//! A stream never gets two addresses silently. Direct claims outrank intra
//! links, which outrank inter links; every disagreement is kept as a
//! [`Conflict`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::net::IpAddr;

use serde::Serialize;

use super::inspect::{parse_payload, Parsed};
use super::{DeanonRecord, Method};
use crate::overlay::{CircuitId, Direction, ExitObservation, StreamId};
use crate::wire::{Endpoint, PeerId};
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Tracker,
    Peer,
    Http,
    /// Encrypted or unrecognized.
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamInfo {
    pub circuit: CircuitId,
    pub first_seen: SimTime,
    pub destination: Endpoint,
    pub kind: StreamKind,
    /// Peer ids the client put in its own messages on this stream.
    pub peer_ids: Vec<PeerId>,
    /// Listening port the client declared (announce `port` or extended
    /// handshake `p`).
    pub listen_port: Option<u16>,
}

/// What the adversary can reconstruct from its observation log alone.
#[derive(Debug, Clone, Default)]
pub struct ObservationIndex {
    pub streams: BTreeMap<StreamId, StreamInfo>,
    pub circuits: BTreeMap<CircuitId, Vec<StreamId>>,
    /// Tracker peer lists returned on each circuit (the memory the
    /// endpoint rule consults).
    pub tracker_lists: BTreeMap<CircuitId, Vec<(SimTime, Vec<Endpoint>)>>,
    by_destination: BTreeMap<Endpoint, Vec<(SimTime, StreamId)>>,
}

impl ObservationIndex {
    pub fn build(observations: &[ExitObservation]) -> Self {
        let mut ix = ObservationIndex::default();
        for obs in observations {
            let info = ix.streams.entry(obs.stream_id).or_insert_with(|| {
                ix.circuits.entry(obs.circuit_id).or_default().push(obs.stream_id);
                ix.by_destination.entry(obs.destination).or_default().push((obs.time, obs.stream_id));
                StreamInfo {
                    circuit: obs.circuit_id,
                    first_seen: obs.time,
                    destination: obs.destination,
                    kind: StreamKind::Other,
                    peer_ids: Vec::new(),
                    listen_port: None,
                }
            });
            let Some(payload) = obs.payload.plaintext() else { continue };
            let parsed = parse_payload(obs.direction, payload);
            if let Some(pid) = parsed.client_peer_id(obs.direction) {
                if !info.peer_ids.contains(&pid) {
                    info.peer_ids.push(pid);
                }
            }
            match (&parsed, obs.direction) {
                (Parsed::Announce(req), Direction::ToDestination) => {
                    info.kind = StreamKind::Tracker;
                    info.listen_port = Some(req.port);
                }
                (Parsed::Handshake(_, Some(ext)), Direction::ToDestination) => {
                    info.kind = StreamKind::Peer;
                    info.listen_port = info.listen_port.or(ext.listen_port);
                }
                (Parsed::Announce(_), _) | (Parsed::TrackerReply(_), _) => info.kind = StreamKind::Tracker,
                (Parsed::Handshake(..), _) => info.kind = StreamKind::Peer,
                (Parsed::Http { .. }, _) => info.kind = StreamKind::Http,
                _ => {}
            }
            if let (Parsed::TrackerReply(resp), Direction::ToClient) = (parsed, obs.direction) {
                ix.tracker_lists.entry(obs.circuit_id).or_default().push((obs.time, resp.peers));
            }
        }
        ix
    }

    pub fn stream_count(&self) -> usize {
        self.streams.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Attribution {
    pub ip: IpAddr,
    pub method: Method,
}

/// A stream that two rules tied to different addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Conflict {
    pub stream: StreamId,
    pub kept: Attribution,
    pub rejected: Attribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DominoError {
    #[error("stream {stream:?} attributed to both {first} and {second}")]
    ConflictingAttribution { stream: StreamId, first: IpAddr, second: IpAddr },
}

#[derive(Debug, Clone, Default)]
pub struct DominoOutcome {
    pub window: SimTime,
    pub attributions: BTreeMap<StreamId, Attribution>,
    pub conflicts: Vec<Conflict>,
}

impl DominoOutcome {
    /// The attribution map, or the first conflict if there was any.
    pub fn strict(&self) -> Result<&BTreeMap<StreamId, Attribution>, DominoError> {
        match self.conflicts.first() {
            None => Ok(&self.attributions),
            Some(c) => Err(DominoError::ConflictingAttribution { stream: c.stream, first: c.kept.ip, second: c.rejected.ip }),
        }
    }

    pub fn count(&self, method: Method) -> usize {
        self.attributions.values().filter(|a| a.method == method).count()
    }

    /// Fraction of domino-linked streams that came from the intra rule.
    pub fn intra_share(&self) -> Option<f64> {
        let intra = self.count(Method::DominoIntra);
        let inter = self.count(Method::DominoInter);
        (intra + inter > 0).then(|| intra as f64 / (intra + inter) as f64)
    }

    /// One unverified record per domino-linked stream, for the claim log.
    pub fn linked_records(&self, index: &ObservationIndex) -> Vec<DeanonRecord> {
        self.attributions
            .iter()
            .filter(|(_, a)| !a.method.is_direct())
            .map(|(sid, a)| {
                let info = index.streams.get(sid);
                let mut r = DeanonRecord::new(a.ip, a.method, *sid, None, info.map_or(0, |i| i.first_seen));
                r.peer_ids_seen.extend(info.iter().flat_map(|i| i.peer_ids.iter().copied()));
                r
            })
            .collect()
    }
}

fn tier(m: Method) -> u8 {
    match m {
        Method::DominoIntra => 1,
        Method::DominoInter => 2,
        _ => 0,
    }
}

struct Linker {
    attributions: BTreeMap<StreamId, Attribution>,
    conflicts: Vec<Conflict>,
    conflict_seen: BTreeSet<(StreamId, IpAddr)>,
}

impl Linker {
    fn assign(&mut self, stream: StreamId, new: Attribution) -> bool {
        let Some(old) = self.attributions.get(&stream).copied() else {
            self.attributions.insert(stream, new);
            return true;
        };
        if old.ip == new.ip {
            if tier(new.method) < tier(old.method) {
                self.attributions.insert(stream, new);
                return true;
            }
            return false;
        }
        let replace = tier(new.method) < tier(old.method);
        let (kept, rejected) = if replace { (new, old) } else { (old, new) };
        if self.conflict_seen.insert((stream, rejected.ip)) {
            self.conflicts.push(Conflict { stream, kept, rejected });
        }
        if replace {
            self.attributions.insert(stream, new);
        }
        replace
    }
}

/// Direct claims only, with the same conflict handling as [`domino_link`].
pub fn direct_attributions(records: &[DeanonRecord]) -> DominoOutcome {
    let mut l = Linker { attributions: BTreeMap::new(), conflicts: Vec::new(), conflict_seen: BTreeSet::new() };
    for r in records.iter().filter(|r| r.method.is_direct()) {
        for s in &r.supporting_streams {
            l.assign(*s, Attribution { ip: r.claimed_ip, method: r.method });
        }
    }
    DominoOutcome { window: 0, attributions: l.attributions, conflicts: l.conflicts }
}

/// Expands direct claims over the observation log. `ignore` lists endpoints
/// the endpoint rule must not use (the adversary's own listener).
pub fn domino_link(
    records: &[DeanonRecord],
    index: &ObservationIndex,
    window: SimTime,
    ignore: &[Endpoint],
) -> DominoOutcome {
    let mut l = Linker { attributions: BTreeMap::new(), conflicts: Vec::new(), conflict_seen: BTreeSet::new() };
    let mut bound: BTreeMap<PeerId, IpAddr> = BTreeMap::new();
    for r in records.iter().filter(|r| r.method.is_direct()) {
        for s in &r.supporting_streams {
            l.assign(*s, Attribution { ip: r.claimed_ip, method: r.method });
        }
        for p in &r.peer_ids_seen {
            bound.entry(*p).or_insert(r.claimed_ip);
        }
    }

    // The endpoint rule's candidates depend only on the log and the window.
    let mut endpoint_hits: Vec<(CircuitId, Vec<StreamId>)> = Vec::new();
    for (circuit, lists) in &index.tracker_lists {
        let mut hit = BTreeSet::new();
        for (t, peers) in lists {
            for ep in peers.iter().filter(|e| !ignore.contains(e)) {
                let Some(hits) = index.by_destination.get(ep) else { continue };
                let from = hits.partition_point(|&(ts, _)| ts < *t);
                for &(_, s) in hits[from..].iter().take_while(|&&(ts, _)| ts - t <= window) {
                    if index.streams[&s].circuit != *circuit {
                        hit.insert(s);
                    }
                }
            }
        }
        if !hit.is_empty() {
            endpoint_hits.push((*circuit, hit.into_iter().collect()));
        }
    }

    loop {
        let mut changed = false;

        for streams in index.circuits.values() {
            let best = streams.iter().filter_map(|s| l.attributions.get(s)).min_by_key(|a| tier(a.method)).copied();
            let Some(best) = best else { continue };
            let method = if tier(best.method) == 0 { Method::DominoIntra } else { Method::DominoInter };
            for s in streams {
                changed |= l.assign(*s, Attribution { ip: best.ip, method });
            }
        }

        for (s, info) in &index.streams {
            if let Some(a) = l.attributions.get(s).copied() {
                for p in &info.peer_ids {
                    bound.entry(*p).or_insert(a.ip);
                }
            }
        }
        for (s, info) in &index.streams {
            for p in &info.peer_ids {
                if let Some(&ip) = bound.get(p) {
                    changed |= l.assign(*s, Attribution { ip, method: Method::DominoInter });
                }
            }
        }

        for (circuit, hits) in &endpoint_hits {
            let Some(ip) = index.circuits[circuit]
                .iter()
                .filter_map(|s| l.attributions.get(s))
                .min_by_key(|a| tier(a.method))
                .map(|a| a.ip)
            else {
                continue;
            };
            for s in hits {
                changed |= l.assign(*s, Attribution { ip, method: Method::DominoInter });
            }
        }

        if !changed {
            break;
        }
    }
    DominoOutcome { window, attributions: l.attributions, conflicts: l.conflicts }
}
