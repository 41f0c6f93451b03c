//! The BitTorrent world: tracker, DHT and the peer agents that use them.

pub mod agent;
pub mod dht;
pub mod dist;
pub mod tracker;

pub use agent::{ClientProfile, IpFieldMix, PeerAgent, UsageMode, UsageWeights};
pub use dht::{Dht, DhtClient, DhtConfig};
pub use dist::{PortConfig, TorrentSizeConfig, TorrentSizeDist, MIN_LISTEN_PORT, POPULAR_PORTS};
pub use tracker::{Tracker, TrackerConfig};
