//! Peer agents: who they are, how they use the overlay, and what their
//! clients leak.

use alloc::string::String;
use alloc::vec::Vec;
use core::net::IpAddr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::overlay::ClientId;
use crate::wire::{
    AnnounceEvent, AnnounceRequest, Endpoint, ExtendedHandshake, Handshake, InfoHash, PeerId, EXTENSION_PROTOCOL_BIT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageMode {
    /// Tracker traffic through the overlay, peer traffic direct.
    TrackerOnlyViaTor,
    /// Both through the overlay.
    ContentAndTrackerViaTor,
    /// Peer traffic through the overlay, tracker direct.
    PeersOnlyViaTor,
    NoTor,
}

impl UsageMode {
    pub fn tracker_via_overlay(self) -> bool {
        matches!(self, UsageMode::TrackerOnlyViaTor | UsageMode::ContentAndTrackerViaTor)
    }

    pub fn peers_via_overlay(self) -> bool {
        matches!(self, UsageMode::ContentAndTrackerViaTor | UsageMode::PeersOnlyViaTor)
    }

    pub fn label(self) -> &'static str {
        match self {
            UsageMode::TrackerOnlyViaTor => "tracker_only",
            UsageMode::ContentAndTrackerViaTor => "content",
            UsageMode::PeersOnlyViaTor => "peers_only",
            UsageMode::NoTor => "no_tor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UsageWeights {
    pub tracker_only: f64,
    pub content: f64,
    pub peers_only: f64,
    pub no_tor: f64,
}

impl Default for UsageWeights {
    fn default() -> Self {
        UsageWeights { tracker_only: 0.72, content: 0.28, peers_only: 0.0, no_tor: 0.0 }
    }
}

impl UsageWeights {
    pub fn as_array(&self) -> [(UsageMode, f64); 4] {
        [
            (UsageMode::TrackerOnlyViaTor, self.tracker_only),
            (UsageMode::ContentAndTrackerViaTor, self.content),
            (UsageMode::PeersOnlyViaTor, self.peers_only),
            (UsageMode::NoTor, self.no_tor),
        ]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> UsageMode {
        let w = self.as_array();
        let mut u: f64 = rng.random();
        for (m, p) in w {
            if u < p {
                return m;
            }
            u -= p;
        }
        // Rounding slack lands on the last mode with weight.
        w.iter().rev().find(|(_, p)| *p > 0.0).map_or(UsageMode::NoTor, |(m, _)| *m)
    }
}

/// What a client puts in the announce `ip=` field when it sets one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpFieldMix {
    pub invalid: f64,
    pub private: f64,
    pub public: f64,
}

impl Default for IpFieldMix {
    fn default() -> Self {
        IpFieldMix { invalid: 0.04, private: 0.38, public: 0.58 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientProfile {
    pub name: String,
    pub weight: f64,
    /// Peer id prefix; one of the client catalog tags.
    pub client_tag: String,
    pub announces_ip_prob: f64,
    pub ip_field: IpFieldMix,
    pub ext_handshake_ip_prob: f64,
    /// When the extended handshake carries an address, the chance that it is
    /// the exit the client last saw itself behind rather than its own.
    pub ext_ip_exit_share: f64,
    pub encrypts_peer_traffic: bool,
    pub dht_enabled: bool,
}

impl Default for ClientProfile {
    fn default() -> Self {
        ClientProfile {
            name: String::from("default"),
            weight: 1.0,
            client_tag: String::from("-UT2210-"),
            announces_ip_prob: 0.35,
            ip_field: IpFieldMix::default(),
            ext_handshake_ip_prob: 0.5,
            ext_ip_exit_share: 0.67,
            encrypts_peer_traffic: false,
            dht_enabled: true,
        }
    }
}

/// The announce `ip=` value a client sends for its whole lifetime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IpFieldValue {
    Invalid(Vec<u8>),
    Private(Vec<u8>),
    Public,
}

#[derive(Debug, Clone)]
pub struct PeerAgent {
    pub client: ClientId,
    pub group: usize,
    /// Fixed at install time.
    pub real_endpoint: Endpoint,
    pub peer_id: PeerId,
    pub usage_mode: UsageMode,
    pub profile: usize,
    pub ip_field: Option<IpFieldValue>,
    pub ext_reports_ip: bool,
    pub ext_ip_exit_share: f64,
    pub encrypts_peer_traffic: bool,
    pub dht_enabled: bool,
    pub torrents: Vec<usize>,
    /// Indices into the site catalog this agent visits.
    pub http_habit: Vec<usize>,
}

fn ip_text(ip: IpAddr) -> Vec<u8> {
    use core::fmt::Write;
    let mut s = String::new();
    let _ = write!(s, "{ip}");
    s.into_bytes()
}

impl PeerAgent {
    /// Draws the sticky announce `ip=` behavior for a client.
    pub fn draw_ip_field<R: Rng + ?Sized>(profile: &ClientProfile, rng: &mut R) -> Option<IpFieldValue> {
        if !rng.random_bool(profile.announces_ip_prob) {
            return None;
        }
        let m = &profile.ip_field;
        let u: f64 = rng.random::<f64>() * (m.invalid + m.private + m.public);
        Some(if u < m.invalid {
            const BAD: [&[u8]; 3] = [b"999.1.1.1", b"localhost.localdomain", b"0.0.0.0"];
            IpFieldValue::Invalid(BAD[rng.random_range(0..BAD.len())].to_vec())
        } else if u < m.invalid + m.private {
            let ip = if rng.random_bool(0.7) {
                IpAddr::from([192, 168, rng.random_range(0..3), rng.random_range(2..250)])
            } else {
                IpAddr::from([10, 0, rng.random_range(0..255), rng.random_range(2..250)])
            };
            IpFieldValue::Private(ip_text(ip))
        } else {
            IpFieldValue::Public
        })
    }

    pub fn announce(&self, info_hash: InfoHash, event: Option<AnnounceEvent>) -> AnnounceRequest {
        let mut r = AnnounceRequest::new(info_hash, self.peer_id, self.real_endpoint.port);
        r.ip_field = match &self.ip_field {
            None => None,
            Some(IpFieldValue::Invalid(b)) | Some(IpFieldValue::Private(b)) => Some(b.clone()),
            Some(IpFieldValue::Public) => Some(ip_text(self.real_endpoint.ip)),
        };
        r.left = 1 << 20;
        r.event = event;
        r.extra.push((b"compact".to_vec(), b"1".to_vec()));
        r
    }

    /// Handshake followed by the extended handshake. `seen_as` is the
    /// address the client last saw itself behind.
    pub fn handshake<R: Rng + ?Sized>(&self, info_hash: InfoHash, seen_as: Option<IpAddr>, rng: &mut R) -> Vec<u8> {
        let mut out = Handshake::new(info_hash, self.peer_id, EXTENSION_PROTOCOL_BIT).encode().to_vec();
        let self_ip = self.ext_reports_ip.then(|| match seen_as {
            Some(exit) if rng.random_bool(self.ext_ip_exit_share) => ip_text(exit),
            _ => ip_text(self.real_endpoint.ip),
        });
        let ext = ExtendedHandshake {
            listen_port: Some(self.real_endpoint.port),
            self_ip,
            client_version: Some(String::from(core::str::from_utf8(&self.peer_id.0[..8]).unwrap_or("unknown"))),
            extensions: [(b"ut_pex".to_vec(), crate::bencode::BValue::Integer(1))].into_iter().collect(),
        };
        out.extend(ext.encode());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{classify_ip, IpClass};
    use alloc::collections::BTreeSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(ip_field: Option<IpFieldValue>) -> PeerAgent {
        PeerAgent {
            client: ClientId(0),
            group: 0,
            real_endpoint: Endpoint::v4(31, 4, 5, 6, 40123),
            peer_id: PeerId(*b"-UT2210-abcdefghijkl"),
            usage_mode: UsageMode::TrackerOnlyViaTor,
            profile: 0,
            ip_field,
            ext_reports_ip: true,
            ext_ip_exit_share: 0.0,
            encrypts_peer_traffic: false,
            dht_enabled: true,
            torrents: Vec::new(),
            http_habit: Vec::new(),
        }
    }

    #[test]
    fn certain_ip_field_is_always_sent() {
        let p = ClientProfile { announces_ip_prob: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = agent(PeerAgent::draw_ip_field(&p, &mut rng));
            assert!(a.announce(InfoHash([1; 20]), None).ip_field.is_some());
        }
    }

    #[test]
    fn public_field_is_the_real_address() {
        let a = agent(Some(IpFieldValue::Public));
        let r = a.announce(InfoHash([1; 20]), Some(AnnounceEvent::Started));
        assert_eq!(classify_ip(r.ip_bytes(), &BTreeSet::new()), IpClass::PublicNonExit);
        assert_eq!(r.ip_bytes(), b"31.4.5.6");
    }

    #[test]
    fn drawn_fields_classify_as_drawn() {
        let p = ClientProfile { announces_ip_prob: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let want = match PeerAgent::draw_ip_field(&p, &mut rng).unwrap() {
                IpFieldValue::Invalid(b) => (b, IpClass::Invalid),
                IpFieldValue::Private(b) => (b, IpClass::Private),
                IpFieldValue::Public => continue,
            };
            assert_eq!(classify_ip(&want.0, &BTreeSet::new()), want.1);
        }
    }

    #[test]
    fn usage_weights_degenerate() {
        let w = UsageWeights { tracker_only: 1.0, content: 0.0, peers_only: 0.0, no_tor: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| w.sample(&mut rng) == UsageMode::TrackerOnlyViaTor));
    }
}
