//! HTTP tracker: registers announcers and hands back a random subset of members.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::net::IpAddr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bencode::{self, BValue};
use crate::wire::{AnnounceEvent, AnnounceRequest, AnnounceResponse, Endpoint, InfoHash};
use crate::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// K: most endpoints returned per announce.
    pub max_peers: usize,
    /// Re-announce interval handed to clients, in seconds.
    pub interval: u32,
    /// A member that has not re-announced for this long is dropped.
    pub member_ttl: SimTime,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { max_peers: 50, interval: 600, member_ttl: 1800 }
    }
}

/// Members of one torrent. Seeded members model the wider population and
/// never expire; live members are agents that announced.
#[derive(Debug, Default, Clone)]
pub(crate) struct MemberSet {
    fixed: Vec<Endpoint>,
    live: Vec<(Endpoint, SimTime)>,
    live_index: BTreeMap<Endpoint, usize>,
}

impl MemberSet {
    pub(crate) fn len(&self) -> usize {
        self.fixed.len() + self.live.len()
    }

    pub(crate) fn get(&self, i: usize) -> Endpoint {
        if i < self.fixed.len() {
            self.fixed[i]
        } else {
            self.live[i - self.fixed.len()].0
        }
    }

    pub(crate) fn add_fixed(&mut self, ep: Endpoint) {
        self.fixed.push(ep);
    }

    pub(crate) fn touch(&mut self, ep: Endpoint, now: SimTime) {
        match self.live_index.get(&ep) {
            Some(&i) => self.live[i].1 = now,
            None => {
                self.live_index.insert(ep, self.live.len());
                self.live.push((ep, now));
            }
        }
    }

    pub(crate) fn remove(&mut self, ep: &Endpoint) {
        if let Some(i) = self.live_index.remove(ep) {
            self.live.swap_remove(i);
            if let Some((moved, _)) = self.live.get(i) {
                self.live_index.insert(*moved, i);
            }
        }
    }

    pub(crate) fn expire(&mut self, cutoff: SimTime) {
        let stale: Vec<Endpoint> = self.live.iter().filter(|(_, t)| *t < cutoff).map(|(e, _)| *e).collect();
        for ep in stale {
            self.remove(&ep);
        }
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = Endpoint> + '_ {
        self.fixed.iter().copied().chain(self.live.iter().map(|(e, _)| *e))
    }

    /// Uniform sample of at most `k` members other than `exclude`, shuffled.
    pub(crate) fn sample(&self, k: usize, exclude: Option<&Endpoint>, rng: &mut ChaCha8Rng) -> Vec<Endpoint> {
        let n = self.len();
        let want = (k + usize::from(exclude.is_some())).min(n);
        let mut out: Vec<Endpoint> = index::sample(rng, n, want)
            .into_iter()
            .map(|i| self.get(i))
            .filter(|e| Some(e) != exclude)
            .collect();
        out.truncate(k);
        out.shuffle(rng);
        out
    }
}

#[derive(Debug)]
pub struct Tracker {
    endpoint: Endpoint,
    config: TrackerConfig,
    torrents: BTreeMap<InfoHash, MemberSet>,
    rng: ChaCha8Rng,
}

impl Tracker {
    pub fn new(endpoint: Endpoint, config: TrackerConfig, seed: u64) -> Self {
        Tracker { endpoint, config, torrents: BTreeMap::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn endpoint(&self) -> Endpoint {
        self.endpoint
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Adds a permanent member, e.g. a peer outside the simulated population.
    pub fn seed_member(&mut self, info_hash: InfoHash, ep: Endpoint) {
        self.torrents.entry(info_hash).or_default().add_fixed(ep);
    }

    pub fn member_count(&self, info_hash: &InfoHash) -> usize {
        self.torrents.get(info_hash).map_or(0, MemberSet::len)
    }

    pub fn members(&self, info_hash: &InfoHash) -> Vec<Endpoint> {
        self.torrents.get(info_hash).map(|m| m.iter().collect()).unwrap_or_default()
    }

    pub fn handle_announce(&mut self, req: &AnnounceRequest, src: IpAddr, now: SimTime) -> AnnounceResponse {
        let me = Endpoint::new(src, req.port);
        let members = self.torrents.entry(req.info_hash).or_default();
        let peers = if req.event == Some(AnnounceEvent::Stopped) {
            members.remove(&me);
            Vec::new()
        } else {
            let peers = members.sample(self.config.max_peers, Some(&me), &mut self.rng);
            members.touch(me, now);
            peers
        };
        let mut resp = AnnounceResponse::new(self.config.interval, peers);
        resp.extra.insert(b"complete".to_vec(), BValue::Integer(members.len() as i64));
        resp
    }

    /// Byte-level entry point: request line in, bencoded body out. Requests
    /// that do not parse get a `failure reason` body.
    pub fn handle_request(&mut self, line: &[u8], src: IpAddr, now: SimTime) -> Vec<u8> {
        match AnnounceRequest::parse(line) {
            Ok(req) => self.handle_announce(&req, src, now).encode().expect("tracker only stores IPv4 members"),
            Err(_) => {
                let mut d = BTreeMap::new();
                d.insert(b"failure reason".to_vec(), BValue::from("invalid announce"));
                bencode::encode(&BValue::Dict(d))
            }
        }
    }

    pub fn expire(&mut self, now: SimTime) {
        let cutoff = now.saturating_sub(self.config.member_ttl);
        for m in self.torrents.values_mut() {
            m.expire(cutoff);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::PeerId;
    use core::net::Ipv4Addr;

    fn req(port: u16) -> AnnounceRequest {
        AnnounceRequest::new(InfoHash([1; 20]), PeerId([2; 20]), port)
    }

    fn ip(d: u8) -> IpAddr {
        IpAddr::V4(Ipv4Addr::new(31, 0, 0, d))
    }

    fn tracker() -> Tracker {
        Tracker::new(Endpoint::v4(93, 0, 0, 1, 80), TrackerConfig::default(), 1)
    }

    #[test]
    fn first_announce_gets_empty_list() {
        let mut t = tracker();
        let r = t.handle_announce(&req(5000), ip(1), 0);
        assert!(r.peers.is_empty());
        assert_eq!(t.members(&InfoHash([1; 20])), [Endpoint::new(ip(1), 5000)]);
    }

    #[test]
    fn small_swarm_returned_whole_without_requester() {
        let mut t = tracker();
        for d in 1..=3 {
            t.handle_announce(&req(5000), ip(d), 0);
        }
        let r = t.handle_announce(&req(6000), ip(9), 1);
        assert_eq!(r.peers.len(), 3);
        let again = t.handle_announce(&req(5000), ip(1), 2);
        assert!(!again.peers.contains(&Endpoint::new(ip(1), 5000)));
        assert_eq!(again.peers.len(), 3);
    }

    #[test]
    fn registers_source_address_not_ip_field() {
        let mut t = tracker();
        let mut r = req(7000);
        r.ip_field = Some(b"8.8.8.8".to_vec());
        let exit = IpAddr::V4(Ipv4Addr::new(185, 0, 0, 1));
        t.handle_announce(&r, exit, 0);
        assert_eq!(t.members(&r.info_hash), [Endpoint::new(exit, 7000)]);
    }

    #[test]
    fn response_size_is_capped() {
        let mut t = tracker();
        for i in 0..200u16 {
            t.seed_member(InfoHash([1; 20]), Endpoint::v4(40, 0, (i >> 8) as u8, i as u8, 1000 + i));
        }
        let r = t.handle_announce(&req(5000), ip(1), 0);
        assert_eq!(r.peers.len(), 50);
        let distinct: alloc::collections::BTreeSet<_> = r.peers.iter().collect();
        assert_eq!(distinct.len(), 50);
    }

    #[test]
    fn stale_members_expire_and_stop_removes() {
        let mut t = tracker();
        t.handle_announce(&req(5000), ip(1), 0);
        t.handle_announce(&req(5001), ip(2), 1000);
        t.expire(2000);
        assert_eq!(t.members(&InfoHash([1; 20])), [Endpoint::new(ip(2), 5001)]);
        let mut stop = req(5001);
        stop.event = Some(AnnounceEvent::Stopped);
        t.handle_announce(&stop, ip(2), 2001);
        assert_eq!(t.member_count(&InfoHash([1; 20])), 0);
    }
}
