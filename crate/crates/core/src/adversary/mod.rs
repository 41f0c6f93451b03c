//! The malicious exit node.
//!
//! [`Adversary`] is fed observations in emission order from the tapped exits,
//! may rewrite tracker replies on the way back to the client, answers
//! connections on its own listener and crawls the DHT. It never sees the
//! [`GroundTruthLedger`](crate::overlay::GroundTruthLedger); the evaluator
//! in [`evaluate`] is the only code that can.

pub mod dht_match;
pub mod domino;
pub mod evaluate;
pub mod hijack;
pub mod inspect;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::overlay::{Direction, ExitObservation, StreamId};
use crate::swarm::dht::Dht;
use crate::wire::{Endpoint, InfoHash, IpClass, NodeId, PeerId};
use crate::SimTime;

pub use dht_match::{dht_match, DhtMatchStats, DhtMatcher, MatchOutcome};
pub use domino::{
    direct_attributions, domino_link, Attribution, Conflict, DominoError, DominoOutcome, ObservationIndex, StreamInfo,
    StreamKind,
};
pub use evaluate::{evaluate, Evaluation, LedgerKey, MethodStats, Ratio};
pub use hijack::{HijackConnection, Hijacker};
pub use inspect::{inspect, parse_payload, Inspection, IpFieldSource, Parsed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    InspectionAnnounce,
    InspectionExtHandshake,
    Hijack,
    DhtMatch,
    DominoIntra,
    DominoInter,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::InspectionAnnounce,
        Method::InspectionExtHandshake,
        Method::Hijack,
        Method::DhtMatch,
        Method::DominoIntra,
        Method::DominoInter,
    ];

    /// Only the two attacks that check the address against the live peer
    /// produce verified claims.
    pub fn is_verified(self) -> bool {
        matches!(self, Method::Hijack | Method::DhtMatch)
    }

    pub fn is_direct(self) -> bool {
        !matches!(self, Method::DominoIntra | Method::DominoInter)
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::InspectionAnnounce => "inspection_announce",
            Method::InspectionExtHandshake => "inspection_ext_handshake",
            Method::Hijack => "hijack",
            Method::DhtMatch => "dht_match",
            Method::DominoIntra => "domino_intra",
            Method::DominoInter => "domino_inter",
        }
    }
}

/// One de-anonymization claim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeanonRecord {
    pub claimed_ip: IpAddr,
    pub method: Method,
    pub verified: bool,
    pub supporting_streams: BTreeSet<StreamId>,
    pub peer_ids_seen: BTreeSet<PeerId>,
    pub time: SimTime,
}

impl DeanonRecord {
    pub fn new(claimed_ip: IpAddr, method: Method, stream: StreamId, peer_id: Option<PeerId>, time: SimTime) -> Self {
        DeanonRecord {
            claimed_ip,
            method,
            verified: method.is_verified(),
            supporting_streams: [stream].into_iter().collect(),
            peer_ids_seen: peer_id.into_iter().collect(),
            time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub inspection: bool,
    pub hijack: bool,
    pub dht_match: bool,
    pub domino: bool,
    /// T: how long a remembered tracker list can link a new circuit.
    pub domino_window: SimTime,
    pub hijack_ttl: SimTime,
    pub excluded_ports: Vec<u16>,
    /// Pending port matches are resolved on this period.
    pub crawl_epoch: SimTime,
    /// A torrent is crawled at most once per this many seconds.
    pub crawl_refresh: SimTime,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            inspection: true,
            hijack: true,
            dht_match: true,
            domino: true,
            domino_window: 300,
            hijack_ttl: 3600,
            excluded_ports: crate::swarm::POPULAR_PORTS.to_vec(),
            crawl_epoch: 300,
            crawl_refresh: 1800,
        }
    }
}

/// Counts of IP-field classes seen in plaintext control messages.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IpFieldTally {
    /// Announces seen, with or without an ip field.
    pub announces: u64,
    pub announce: BTreeMap<&'static str, u64>,
    /// Extended handshakes seen.
    pub ext_handshakes: u64,
    pub ext_handshake: BTreeMap<&'static str, u64>,
}

impl IpFieldTally {
    fn count(&mut self, source: IpFieldSource, class: IpClass) {
        let (total, map) = match source {
            IpFieldSource::Announce => (&mut self.announces, &mut self.announce),
            IpFieldSource::ExtHandshake => (&mut self.ext_handshakes, &mut self.ext_handshake),
        };
        *total += 1;
        *map.entry(class.label()).or_default() += 1;
    }
}

/// Everything the adversary produced during a run.
#[derive(Debug, Clone, Default)]
pub struct AttackLog {
    pub records: Vec<DeanonRecord>,
    pub connections: Vec<HijackConnection>,
    pub tally: IpFieldTally,
    pub dht: DhtMatchStats,
    /// Every crawl: when, which torrent, how many endpoints it found.
    pub crawls: Vec<(SimTime, InfoHash, usize)>,
    pub listener: Option<Endpoint>,
}

#[derive(Debug)]
pub struct Adversary {
    config: AttackConfig,
    exit_ips: BTreeSet<IpAddr>,
    hijacker: Hijacker,
    matcher: DhtMatcher,
    log: AttackLog,
}

impl Adversary {
    /// `listener` is where hijacked victims connect; `crawler` is the UDP
    /// endpoint the DHT crawls come from.
    pub fn new(config: AttackConfig, exit_ips: BTreeSet<IpAddr>, listener: Endpoint, crawler: Endpoint, peer_id: PeerId) -> Self {
        let hijacker = Hijacker::new(listener, peer_id, config.hijack_ttl);
        let node_id = NodeId(peer_id.0);
        let matcher = DhtMatcher::new(node_id, crawler, config.excluded_ports.clone(), config.crawl_refresh);
        let log = AttackLog { listener: config.hijack.then_some(listener), ..AttackLog::default() };
        Adversary { config, exit_ips, hijacker, matcher, log }
    }

    pub fn config(&self) -> &AttackConfig {
        &self.config
    }

    pub fn exit_ips(&self) -> &BTreeSet<IpAddr> {
        &self.exit_ips
    }

    pub fn listener(&self) -> Endpoint {
        self.hijacker.listener()
    }

    pub fn records(&self) -> &[DeanonRecord] {
        &self.log.records
    }

    /// Handles one observation from a tapped exit. A returned payload
    /// replaces what the exit forwards to the client.
    pub fn observe(&mut self, obs: &ExitObservation) -> Option<Vec<u8>> {
        let payload = obs.payload.plaintext()?;
        let parsed = parse_payload(obs.direction, payload);
        if self.config.inspection {
            if let Some(ins) = inspect::inspect_parsed(obs, &parsed, &self.exit_ips) {
                self.log.tally.count(ins.source, ins.class);
                self.log.records.extend(ins.record);
            }
        }
        match (&parsed, obs.direction) {
            (Parsed::Announce(req), Direction::ToDestination) => {
                if self.config.hijack {
                    self.hijacker.note_request(obs.stream_id, req.info_hash, req.peer_id);
                }
                if self.config.dht_match {
                    self.matcher.observe(req.info_hash, req.port, obs.stream_id, Some(req.peer_id), obs.time);
                }
                None
            }
            (Parsed::Handshake(hs, Some(ext)), Direction::ToDestination) => {
                if let (true, Some(p)) = (self.config.dht_match, ext.listen_port) {
                    self.matcher.observe(hs.info_hash, p, obs.stream_id, Some(hs.peer_id), obs.time);
                }
                None
            }
            (Parsed::TrackerReply(resp), Direction::ToClient) if self.config.hijack => {
                self.hijacker.rewrite(obs, resp)
            }
            _ => None,
        }
    }

    /// A peer connected to the listener and sent `data`. Returns the bytes
    /// the listener answers with.
    pub fn accept(&mut self, src: Endpoint, data: &[u8], now: SimTime) -> Vec<u8> {
        let (record, reply) = self.hijacker.accept(src, data, now, &self.exit_ips);
        self.log.records.extend(record);
        reply
    }

    /// Follow-up bytes on a listener connection (the piece token).
    pub fn receive(&mut self, src: Endpoint, data: &[u8]) {
        self.hijacker.receive(src, data);
    }

    /// Resolves pending port matches against fresh crawls.
    pub fn crawl_epoch(&mut self, dht: &mut Dht, now: SimTime) {
        self.hijacker.expire(now);
        if !self.config.dht_match {
            return;
        }
        let records = self.matcher.run_epoch(dht, &self.exit_ips, now, &mut self.log.crawls);
        self.log.records.extend(records);
    }

    pub fn finish(mut self) -> AttackLog {
        self.log.connections = self.hijacker.into_connections();
        self.log.dht = self.matcher.stats().clone();
        self.log
    }
}
