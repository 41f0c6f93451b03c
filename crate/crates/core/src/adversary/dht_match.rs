//! DHT port matching.
//!
//! A client that hides behind the overlay still publishes its real address
//! to the DHT over UDP. Its listening port, read from an announce or an
//! extended handshake, singles it out among the torrent's DHT endpoints.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::net::IpAddr;

use serde::Serialize;

use super::{DeanonRecord, Method};
use crate::overlay::StreamId;
use crate::swarm::dht::{Dht, DhtClient};
use crate::wire::{Endpoint, InfoHash, NodeId, PeerId};
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    /// The port is too common to identify anyone.
    ExcludedPort,
    NoCandidate,
    /// More than one endpoint carries the port; no claim is made.
    Ambiguous(usize),
    Unique(Endpoint),
}

/// Matches `port` against a crawl. Exit addresses are never candidates.
pub fn dht_match(crawl: &BTreeSet<Endpoint>, port: u16, exit_ips: &BTreeSet<IpAddr>, excluded: &[u16]) -> MatchOutcome {
    if excluded.contains(&port) {
        return MatchOutcome::ExcludedPort;
    }
    let mut hits = crawl.iter().filter(|e| e.port == port && !exit_ips.contains(&e.ip));
    match (hits.next(), hits.count()) {
        (None, _) => MatchOutcome::NoCandidate,
        (Some(e), 0) => MatchOutcome::Unique(*e),
        (Some(_), more) => MatchOutcome::Ambiguous(more + 1),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DhtMatchStats {
    /// Distinct (torrent, port) pairs observed.
    pub observed: u64,
    pub excluded: u64,
    pub no_candidate: u64,
    pub ambiguous: u64,
    pub matched: u64,
}

#[derive(Debug, Clone, Copy)]
struct Waiting {
    port: u16,
    stream: StreamId,
    peer_id: Option<PeerId>,
    time: SimTime,
}

#[derive(Debug)]
pub struct DhtMatcher {
    client: DhtClient,
    excluded: Vec<u16>,
    refresh: SimTime,
    queue: BTreeMap<InfoHash, Vec<Waiting>>,
    seen: BTreeSet<(InfoHash, u16)>,
    last_crawl: BTreeMap<InfoHash, (SimTime, BTreeSet<Endpoint>)>,
    stats: DhtMatchStats,
}

impl DhtMatcher {
    pub fn new(node_id: NodeId, endpoint: Endpoint, excluded: Vec<u16>, refresh: SimTime) -> Self {
        DhtMatcher {
            client: DhtClient::new(node_id, endpoint),
            excluded,
            refresh,
            queue: BTreeMap::new(),
            seen: BTreeSet::new(),
            last_crawl: BTreeMap::new(),
            stats: DhtMatchStats::default(),
        }
    }

    pub fn stats(&self) -> &DhtMatchStats {
        &self.stats
    }

    /// Queues a (torrent, port) pair. Each pair is tried once.
    pub fn observe(&mut self, info_hash: InfoHash, port: u16, stream: StreamId, peer_id: Option<PeerId>, now: SimTime) {
        if !self.seen.insert((info_hash, port)) {
            return;
        }
        self.stats.observed += 1;
        if self.excluded.contains(&port) {
            self.stats.excluded += 1;
            return;
        }
        self.queue.entry(info_hash).or_default().push(Waiting { port, stream, peer_id, time: now });
    }

    /// Resolves every waiting pair whose torrent has a crawl newer than the
    /// observation, crawling torrents whose last crawl is stale.
    pub fn run_epoch(
        &mut self,
        dht: &mut Dht,
        exit_ips: &BTreeSet<IpAddr>,
        now: SimTime,
        crawls: &mut Vec<(SimTime, InfoHash, usize)>,
    ) -> Vec<DeanonRecord> {
        let mut out = Vec::new();
        let torrents: Vec<InfoHash> = self.queue.keys().copied().collect();
        for ih in torrents {
            let stale = self.last_crawl.get(&ih).is_none_or(|(t, _)| now.saturating_sub(*t) >= self.refresh);
            if stale {
                let found = self.client.crawl(dht, &ih, now);
                crawls.push((now, ih, found.len()));
                self.last_crawl.insert(ih, (now, found));
            }
            let (crawled_at, found) = &self.last_crawl[&ih];
            let waiting = self.queue.get_mut(&ih).expect("queued");
            let (ready, later): (Vec<Waiting>, Vec<Waiting>) = waiting.iter().partition(|w| w.time <= *crawled_at);
            *waiting = later;
            for w in ready {
                match dht_match(found, w.port, exit_ips, &self.excluded) {
                    MatchOutcome::Unique(ep) => {
                        self.stats.matched += 1;
                        out.push(DeanonRecord::new(ep.ip, Method::DhtMatch, w.stream, w.peer_id, now));
                    }
                    MatchOutcome::Ambiguous(_) => self.stats.ambiguous += 1,
                    MatchOutcome::NoCandidate => self.stats.no_candidate += 1,
                    MatchOutcome::ExcludedPort => self.stats.excluded += 1,
                }
            }
            if waiting.is_empty() {
                self.queue.remove(&ih);
            }
        }
        out
    }
}
