//! Mainline-style DHT over UDP.
//!
//! Each infohash lives on the node whose id is XOR-closest to it. Nodes speak
//! KRPC; `get_peers` on the responsible node returns a uniform random subset
//! of at most `max_values` stored endpoints.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tracker::MemberSet;
use crate::overlay::Datagram;
use crate::wire::{Endpoint, InfoHash, KrpcKind, KrpcMessage, NodeId, PeersOrNodes};
use crate::SimTime;

const ERR_BAD_TOKEN: i64 = 203;
const ERR_UNKNOWN_METHOD: i64 = 204;
const CLOSEST_NODES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DhtConfig {
    pub nodes: usize,
    /// K_dht: most endpoints in one `get_peers` answer.
    pub max_values: usize,
    /// R: crawl stops after this many consecutive rounds with nothing new.
    pub stability_rounds: usize,
    pub announce_interval: SimTime,
    pub entry_ttl: SimTime,
}

impl Default for DhtConfig {
    fn default() -> Self {
        DhtConfig { nodes: 64, max_values: 8, stability_rounds: 5, announce_interval: 900, entry_ttl: 1800 }
    }
}

#[derive(Debug)]
pub struct DhtNode {
    pub id: NodeId,
    pub endpoint: Endpoint,
    store: BTreeMap<InfoHash, MemberSet>,
}

#[derive(Debug)]
pub struct Dht {
    config: DhtConfig,
    nodes: Vec<DhtNode>,
    by_endpoint: BTreeMap<Endpoint, usize>,
    /// Node ids as integers, for fast XOR distance.
    keys: Vec<(u128, u32)>,
    owners: BTreeMap<InfoHash, usize>,
    token_secret: u64,
    rng: ChaCha8Rng,
}

fn key(id: &[u8; 20]) -> (u128, u32) {
    let mut hi = [0u8; 16];
    hi.copy_from_slice(&id[..16]);
    (u128::from_be_bytes(hi), u32::from_be_bytes([id[16], id[17], id[18], id[19]]))
}

impl Dht {
    /// Builds `config.nodes` nodes listening at `node_endpoint(i)`.
    pub fn new(config: DhtConfig, seed: u64, mut node_endpoint: impl FnMut(usize) -> Endpoint) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: Vec<DhtNode> = (0..config.nodes.max(1))
            .map(|i| DhtNode { id: NodeId::random(&mut rng), endpoint: node_endpoint(i), store: BTreeMap::new() })
            .collect();
        let by_endpoint = nodes.iter().enumerate().map(|(i, n)| (n.endpoint, i)).collect();
        let keys = nodes.iter().map(|n| key(n.id.as_bytes())).collect();
        let token_secret = rng.random();
        Dht { config, nodes, by_endpoint, keys, owners: BTreeMap::new(), token_secret, rng }
    }

    pub fn config(&self) -> &DhtConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[DhtNode] {
        &self.nodes
    }

    pub fn bootstrap(&self) -> Endpoint {
        self.nodes[0].endpoint
    }

    fn closest(&self, target: &[u8; 20], k: usize) -> Vec<usize> {
        let t = key(target);
        let mut idx: Vec<((u128, u32), usize)> =
            self.keys.iter().enumerate().map(|(i, &(a, b))| ((a ^ t.0, b ^ t.1), i)).collect();
        if k < idx.len() {
            idx.select_nth_unstable(k);
            idx.truncate(k);
        }
        idx.sort_unstable();
        idx.into_iter().map(|(_, i)| i).collect()
    }

    /// Index of the node responsible for `info_hash`: the one whose id is
    /// nearest in XOR distance.
    pub fn responsible(&self, info_hash: &InfoHash) -> usize {
        if let Some(&n) = self.owners.get(info_hash) {
            return n;
        }
        let t = key(info_hash.as_bytes());
        (0..self.keys.len()).min_by_key(|&i| (self.keys[i].0 ^ t.0, self.keys[i].1 ^ t.1)).expect("at least one node")
    }

    fn owner(&mut self, info_hash: &InfoHash) -> usize {
        if let Some(&n) = self.owners.get(info_hash) {
            return n;
        }
        let n = self.responsible(info_hash);
        self.owners.insert(*info_hash, n);
        n
    }

    /// Places a permanent entry on the responsible node.
    pub fn seed_peer(&mut self, info_hash: InfoHash, ep: Endpoint) {
        let n = self.owner(&info_hash);
        self.nodes[n].store.entry(info_hash).or_default().add_fixed(ep);
    }

    /// Everything the DHT holds for `info_hash`. Simulation-side ground truth.
    pub fn stored(&self, info_hash: &InfoHash) -> BTreeSet<Endpoint> {
        self.nodes
            .iter()
            .filter_map(|n| n.store.get(info_hash))
            .flat_map(MemberSet::iter)
            .collect()
    }

    pub fn expire(&mut self, now: SimTime) {
        let cutoff = now.saturating_sub(self.config.entry_ttl);
        for n in &mut self.nodes {
            for m in n.store.values_mut() {
                m.expire(cutoff);
            }
        }
    }

    fn token_for(&self, src: &Endpoint) -> Vec<u8> {
        // FNV-1a over the source address, keyed by a per-run secret.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.token_secret;
        let (v4, v6);
        let octets: &[u8] = match src.ip {
            core::net::IpAddr::V4(a) => {
                v4 = a.octets();
                &v4
            }
            core::net::IpAddr::V6(a) => {
                v6 = a.octets();
                &v6
            }
        };
        for &b in octets {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h.to_be_bytes()[..4].to_vec()
    }

    /// Answers one query addressed to the node at `dst`. Responses and
    /// unknown destinations yield `None`.
    pub fn handle(&mut self, dst: &Endpoint, src: &Endpoint, msg: &KrpcMessage, now: SimTime) -> Option<KrpcMessage> {
        let &node = self.by_endpoint.get(dst)?;
        let me = Some(self.nodes[node].id);
        let reply = |kind| KrpcMessage { transaction_id: msg.transaction_id.clone(), sender: me, kind };
        let kind = match &msg.kind {
            KrpcKind::FindNodeQuery { target } => {
                let nodes = self
                    .closest(target.as_bytes(), CLOSEST_NODES)
                    .into_iter()
                    .map(|i| (self.nodes[i].id, self.nodes[i].endpoint))
                    .collect();
                KrpcKind::FindNodeResponse { nodes }
            }
            KrpcKind::GetPeersQuery { info_hash } => {
                let token = self.token_for(src);
                let owner = self.owner(info_hash);
                let result = if owner == node {
                    let k = self.config.max_values;
                    let values = match self.nodes[node].store.get(info_hash) {
                        Some(m) => m.sample(k, None, &mut self.rng),
                        None => Vec::new(),
                    };
                    PeersOrNodes::Peers(values)
                } else {
                    PeersOrNodes::Nodes(alloc::vec![(self.nodes[owner].id, self.nodes[owner].endpoint)])
                };
                KrpcKind::GetPeersResponse { token, result }
            }
            KrpcKind::AnnouncePeerQuery { info_hash, port, token } => {
                if *token != self.token_for(src) {
                    return Some(KrpcMessage::error(msg.transaction_id.clone(), ERR_BAD_TOKEN, "bad token"));
                }
                let ep = Endpoint::new(src.ip, *port);
                self.nodes[node].store.entry(*info_hash).or_default().touch(ep, now);
                KrpcKind::AnnouncePeerResponse
            }
            KrpcKind::Error { .. } => return None,
            _ if !msg.kind.is_query() => return None,
            _ => return Some(KrpcMessage::error(msg.transaction_id.clone(), ERR_UNKNOWN_METHOD, "method unknown")),
        };
        Some(reply(kind))
    }

    /// Byte-level entry point for datagrams sent with
    /// [`Overlay::udp_send`](crate::overlay::Overlay::udp_send).
    pub fn handle_datagram(&mut self, dg: &Datagram, now: SimTime) -> Option<Datagram> {
        let reply = match KrpcMessage::parse(&dg.payload) {
            Ok(msg) => self.handle(&dg.destination, &dg.source, &msg, now)?,
            Err(_) => KrpcMessage::error(Vec::new(), 203, "malformed"),
        };
        Some(Datagram { source: dg.destination, destination: dg.source, payload: reply.encode().ok()? })
    }
}

/// A DHT participant: issues queries from a fixed UDP endpoint.
#[derive(Debug, Clone)]
pub struct DhtClient {
    pub node_id: NodeId,
    pub endpoint: Endpoint,
    next_tid: u16,
}

impl DhtClient {
    pub fn new(node_id: NodeId, endpoint: Endpoint) -> Self {
        DhtClient { node_id, endpoint, next_tid: 0 }
    }

    fn tid(&mut self) -> Vec<u8> {
        self.next_tid = self.next_tid.wrapping_add(1);
        self.next_tid.to_be_bytes().to_vec()
    }

    fn ask(&mut self, dht: &mut Dht, dst: Endpoint, kind: KrpcKind, now: SimTime) -> Option<KrpcMessage> {
        let q = KrpcMessage::query(self.tid(), self.node_id, kind);
        let r = dht.handle(&dst, &self.endpoint, &q, now)?;
        (r.transaction_id == q.transaction_id).then_some(r)
    }

    /// find_node toward `info_hash`; returns the closest node's endpoint.
    pub fn find_node(&mut self, dht: &mut Dht, info_hash: &InfoHash, now: SimTime) -> Option<(NodeId, Endpoint)> {
        let boot = dht.bootstrap();
        match self.ask(dht, boot, KrpcKind::FindNodeQuery { target: NodeId(info_hash.0) }, now)?.kind {
            KrpcKind::FindNodeResponse { nodes } => nodes.first().copied(),
            _ => None,
        }
    }

    /// One get_peers round trip against `node`. Follows a single referral.
    pub fn get_peers(&mut self, dht: &mut Dht, node: Endpoint, info_hash: &InfoHash, now: SimTime) -> (Vec<Endpoint>, Option<(Endpoint, Vec<u8>)>) {
        let mut target = node;
        for _ in 0..2 {
            let Some(r) = self.ask(dht, target, KrpcKind::GetPeersQuery { info_hash: *info_hash }, now) else {
                break;
            };
            match r.kind {
                KrpcKind::GetPeersResponse { token, result: PeersOrNodes::Peers(p) } => return (p, Some((target, token))),
                KrpcKind::GetPeersResponse { result: PeersOrNodes::Nodes(n), .. } if !n.is_empty() => target = n[0].1,
                _ => break,
            }
        }
        (Vec::new(), None)
    }

    /// Looks up the responsible node and fetches a token; returns the
    /// announce_peer query to send to it.
    pub fn prepare_announce(&mut self, dht: &mut Dht, info_hash: &InfoHash, port: u16, now: SimTime) -> Option<(Endpoint, KrpcMessage)> {
        let (_, node) = self.find_node(dht, info_hash, now)?;
        let (_, Some((node, token))) = self.get_peers(dht, node, info_hash, now) else { return None };
        let q = KrpcMessage::query(self.tid(), self.node_id, KrpcKind::AnnouncePeerQuery { info_hash: *info_hash, port, token });
        Some((node, q))
    }

    /// Publishes this client's address under `info_hash` on the responsible node.
    pub fn announce(&mut self, dht: &mut Dht, info_hash: &InfoHash, port: u16, now: SimTime) -> bool {
        let Some((node, q)) = self.prepare_announce(dht, info_hash, port, now) else { return false };
        matches!(
            dht.handle(&node, &self.endpoint, &q, now).map(|r| r.kind),
            Some(KrpcKind::AnnouncePeerResponse)
        )
    }

    /// Collects a torrent's endpoints by repeated get_peers sampling.
    ///
    /// A round issues `ceil(2 * found / max_values)` queries (at least one),
    /// so each round draws about twice the known population. The crawl ends
    /// after `stability_rounds` consecutive rounds that add nothing.
    pub fn crawl(&mut self, dht: &mut Dht, info_hash: &InfoHash, now: SimTime) -> BTreeSet<Endpoint> {
        let k = dht.config.max_values.max(1);
        let rounds = dht.config.stability_rounds;
        let mut found = BTreeSet::new();
        let Some((_, node)) = self.find_node(dht, info_hash, now) else { return found };
        let mut quiet = 0;
        while quiet < rounds {
            let queries = (2 * found.len()).div_ceil(k).max(1);
            let before = found.len();
            for _ in 0..queries {
                found.extend(self.get_peers(dht, node, info_hash, now).0);
            }
            quiet = if found.len() > before { 0 } else { quiet + 1 };
        }
        found
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dht() -> Dht {
        Dht::new(DhtConfig::default(), 9, |i| Endpoint::v4(87, 0, (i >> 8) as u8, i as u8, 6881))
    }

    #[test]
    fn announce_then_get_peers_and_crawl_singleton() {
        let mut d = dht();
        let ih = InfoHash([5; 20]);
        let mut alice = DhtClient::new(NodeId([1; 20]), Endpoint::v4(31, 1, 1, 1, 40000));
        assert!(alice.announce(&mut d, &ih, 51000, 0));
        assert_eq!(d.stored(&ih), [Endpoint::v4(31, 1, 1, 1, 51000)].into_iter().collect());
        let mut bob = DhtClient::new(NodeId([2; 20]), Endpoint::v4(45, 0, 0, 1, 40000));
        let found = bob.crawl(&mut d, &ih, 1);
        assert_eq!(found, d.stored(&ih));
    }

    #[test]
    fn unknown_infohash_is_empty() {
        let mut d = dht();
        let mut bob = DhtClient::new(NodeId([2; 20]), Endpoint::v4(45, 0, 0, 1, 40000));
        let node = bob.find_node(&mut d, &InfoHash([7; 20]), 0).unwrap().1;
        assert!(bob.get_peers(&mut d, node, &InfoHash([7; 20]), 0).0.is_empty());
        assert!(bob.crawl(&mut d, &InfoHash([7; 20]), 0).is_empty());
    }

    #[test]
    fn get_peers_is_capped() {
        let mut d = dht();
        let ih = InfoHash([5; 20]);
        for i in 0..100u16 {
            d.seed_peer(ih, Endpoint::v4(40, 0, 0, i as u8, 2000 + i));
        }
        let mut bob = DhtClient::new(NodeId([2; 20]), Endpoint::v4(45, 0, 0, 1, 40000));
        let node = bob.find_node(&mut d, &ih, 0).unwrap().1;
        let (peers, token) = bob.get_peers(&mut d, node, &ih, 0);
        assert_eq!(peers.len(), 8);
        assert!(token.is_some());
    }

    #[test]
    fn forged_token_rejected() {
        let mut d = dht();
        let ih = InfoHash([5; 20]);
        let node = d.nodes()[d.responsible(&ih)].endpoint;
        let q = KrpcMessage::query(b"t".to_vec(), NodeId([1; 20]), KrpcKind::AnnouncePeerQuery { info_hash: ih, port: 1, token: b"nope".to_vec() });
        let r = d.handle(&node, &Endpoint::v4(31, 0, 0, 1, 1), &q, 0).unwrap();
        assert!(matches!(r.kind, KrpcKind::Error { code: 203, .. }));
        assert!(d.stored(&ih).is_empty());
    }

    #[test]
    fn datagram_path_uses_the_source_address() {
        let mut d = dht();
        let ih = InfoHash([6; 20]);
        let node = d.nodes()[d.responsible(&ih)].endpoint;
        let src = Endpoint::v4(31, 9, 9, 9, 40000);
        let gp = KrpcMessage::query(b"a".to_vec(), NodeId([1; 20]), KrpcKind::GetPeersQuery { info_hash: ih });
        let r = d.handle_datagram(&Datagram { source: src, destination: node, payload: gp.encode().unwrap() }, 0).unwrap();
        let KrpcKind::GetPeersResponse { token, .. } = KrpcMessage::parse(&r.payload).unwrap().kind else { panic!() };
        let ap = KrpcMessage::query(b"b".to_vec(), NodeId([1; 20]), KrpcKind::AnnouncePeerQuery { info_hash: ih, port: 7777, token });
        d.handle_datagram(&Datagram { source: src, destination: node, payload: ap.encode().unwrap() }, 0).unwrap();
        assert!(d.stored(&ih).contains(&Endpoint::v4(31, 9, 9, 9, 7777)));
    }
}
