//! Scenario configuration. Every field except `seed` has a default, so a
//! config file only needs to name what it changes.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::adversary::AttackConfig;
use crate::overlay::OverlayConfig;
use crate::swarm::{ClientProfile, DhtConfig, PortConfig, TorrentSizeConfig, TrackerConfig, UsageWeights};
use crate::SimTime;

/// Group labels map onto first octets starting here.
pub const GROUP_BASE_OCTET: u8 = 20;
pub const MAX_GROUPS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// No default: a run is always reproducible from its file.
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration: SimTime,
    #[serde(default)]
    pub run: RunKind,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default = "default_profiles")]
    pub profiles: Vec<ClientProfile>,
    #[serde(default)]
    pub torrent_size: TorrentSizeConfig,
    #[serde(default)]
    pub ports: PortConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub overlay: OverlayConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub dht: DhtConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default = "default_groups")]
    pub groups: Vec<GroupConfig>,
    #[serde(default)]
    pub http: HttpConfig,
    #[serde(default)]
    pub studies: StudiesConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_duration() -> SimTime {
    86_400
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    /// One simulation with every enabled attack.
    #[default]
    Simulation,
    /// Simulation, then the domino linker re-run for every window in
    /// `studies.domino_windows`.
    DominoStudy,
    /// Port-collision study only; no swarm simulation.
    DhtFpStudy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub agents: usize,
    pub torrents: usize,
    pub max_torrents_per_agent: usize,
    pub usage: UsageWeights,
    pub session_mean: SimTime,
    pub offline_mean: SimTime,
    /// New peers contacted after each tracker reply.
    pub connections_per_announce: usize,
    /// Connections after a reply are spread over this many seconds.
    pub connect_spread: SimTime,
    /// Share of a torrent's background members that are also in the DHT.
    pub background_dht_presence: f64,
    /// Draw a fresh peer id at every session start.
    pub peer_id_per_session: bool,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            agents: 10_000,
            torrents: 500,
            max_torrents_per_agent: 3,
            usage: UsageWeights::default(),
            session_mean: 7_200,
            offline_mean: 14_400,
            connections_per_announce: 3,
            connect_spread: 120,
            background_dht_presence: 0.8,
            peer_id_per_session: false,
        }
    }
}

fn profile(name: &str, weight: f64, tag: &str, announces_ip_prob: f64, ext_ip: f64, encrypts: bool) -> ClientProfile {
    ClientProfile {
        name: name.to_string(),
        weight,
        client_tag: tag.to_string(),
        announces_ip_prob,
        ext_handshake_ip_prob: ext_ip,
        encrypts_peer_traffic: encrypts,
        ..ClientProfile::default()
    }
}

/// A mix whose weighted announce-ip probability is 0.35.
pub fn default_profiles() -> Vec<ClientProfile> {
    vec![
        profile("utorrent", 0.45, "-UT2210-", 0.35, 0.5, false),
        profile("vuze", 0.20, "-AZ4604-", 0.50, 0.6, false),
        profile("transmission", 0.20, "-TR2220-", 0.20, 0.3, false),
        profile("qbittorrent-encrypted", 0.15, "-qB2720-", 0.35, 0.5, true),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub exit_relays: usize,
    pub middle_relays: usize,
    /// Exits carrying an adversary tap.
    pub tapped_exits: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { exit_relays: 50, middle_relays: 150, tapped_exits: 6 }
    }
}

/// A synthetic location label. `baseline_weight` is the group's weight in
/// the regular (non-overlay) BitTorrent population; absent means unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub label: String,
    pub tor_weight: f64,
    #[serde(default)]
    pub baseline_weight: Option<f64>,
}

pub fn default_groups() -> Vec<GroupConfig> {
    let g = |label: &str, tor_weight, baseline_weight| GroupConfig { label: label.to_string(), tor_weight, baseline_weight };
    vec![
        g("US", 0.22, Some(0.12)),
        g("DE", 0.12, Some(0.05)),
        g("JP", 0.13, Some(0.024)),
        g("FR", 0.09, Some(0.06)),
        g("RU", 0.08, Some(0.08)),
        g("GB", 0.06, Some(0.07)),
        g("IT", 0.05, Some(0.06)),
        g("ES", 0.04, Some(0.05)),
        g("CN", 0.03, None),
        g("OTHER", 0.18, Some(0.486)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryConfig {
    pub label: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    /// Chance an agent browses at all.
    pub habit_prob: f64,
    pub sites: usize,
    pub sites_per_habit: usize,
    /// Mean seconds between page loads while online.
    pub mean_gap: SimTime,
    pub categories: Vec<CategoryConfig>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        let c = |label: &str, weight| CategoryConfig { label: label.to_string(), weight };
        HttpConfig {
            habit_prob: 0.7,
            sites: 200,
            sites_per_habit: 3,
            mean_gap: 1_800,
            categories: vec![
                c("search", 0.20),
                c("social", 0.15),
                c("news", 0.15),
                c("adult", 0.10),
                c("streaming", 0.10),
                c("shopping", 0.10),
                c("technology", 0.10),
                c("filesharing", 0.10),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DhtFpStudyConfig {
    pub seeds: u64,
    pub torrents_per_seed: usize,
    pub sizes: Vec<usize>,
    /// Chance that a victim is not in the DHT when the crawl runs.
    pub absent_prob: f64,
}

impl Default for DhtFpStudyConfig {
    fn default() -> Self {
        DhtFpStudyConfig { seeds: 50, torrents_per_seed: 20, sizes: vec![100, 1_000], absent_prob: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudiesConfig {
    pub dht_fp: DhtFpStudyConfig,
    pub domino_windows: Vec<SimTime>,
}

impl Default for StudiesConfig {
    fn default() -> Self {
        StudiesConfig { dht_fp: DhtFpStudyConfig::default(), domino_windows: vec![0, 60, 120, 300, 600, 1_200] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
    /// The observation log is the largest output; it can be skipped.
    pub observations: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: None, observations: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {reason}")]
pub struct ConfigError {
    pub path: String,
    pub reason: String,
}

fn err(path: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError { path: path.into(), reason: reason.into() }
}

const WEIGHT_TOLERANCE: f64 = 1e-9;

fn check_prob(path: &str, p: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(err(path, alloc::format!("{p} is not a probability")))
    }
}

fn check_sum(path: &str, weights: impl IntoIterator<Item = f64>) -> Result<(), ConfigError> {
    let mut sum = 0.0;
    for w in weights {
        if !(w >= 0.0) {
            return Err(err(path, alloc::format!("weight {w} is negative")));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(err(path, alloc::format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

impl ScenarioConfig {
    /// Defaults everywhere, with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        ScenarioConfig {
            seed,
            duration: default_duration(),
            run: RunKind::default(),
            population: PopulationConfig::default(),
            profiles: default_profiles(),
            torrent_size: TorrentSizeConfig::default(),
            ports: PortConfig::default(),
            network: NetworkConfig::default(),
            overlay: OverlayConfig::default(),
            tracker: TrackerConfig::default(),
            dht: DhtConfig::default(),
            attack: AttackConfig::default(),
            groups: default_groups(),
            http: HttpConfig::default(),
            studies: StudiesConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.duration < 1 {
            return Err(err("duration", "must be at least 1 second"));
        }
        let p = &self.population;
        check_sum("population.usage", p.usage.as_array().map(|(_, w)| w))?;
        if p.torrents == 0 {
            return Err(err("population.torrents", "must be at least 1"));
        }
        if p.max_torrents_per_agent == 0 {
            return Err(err("population.max_torrents_per_agent", "must be at least 1"));
        }
        if p.session_mean == 0 || p.offline_mean == 0 {
            return Err(err("population.session_mean", "session and offline means must be positive"));
        }
        check_prob("population.background_dht_presence", p.background_dht_presence)?;

        if self.profiles.is_empty() {
            return Err(err("profiles", "at least one client profile is required"));
        }
        check_sum("profiles.weight", self.profiles.iter().map(|c| c.weight))?;
        for (i, c) in self.profiles.iter().enumerate() {
            let at = |f: &str| alloc::format!("profiles[{i}].{f}");
            check_prob(&at("announces_ip_prob"), c.announces_ip_prob)?;
            check_prob(&at("ext_handshake_ip_prob"), c.ext_handshake_ip_prob)?;
            check_prob(&at("ext_ip_exit_share"), c.ext_ip_exit_share)?;
            check_sum(&at("ip_field"), [c.ip_field.invalid, c.ip_field.private, c.ip_field.public])?;
            if c.client_tag.len() >= 20 {
                return Err(err(at("client_tag"), "must be shorter than a peer id"));
            }
        }

        let t = &self.torrent_size;
        if !(t.median > 0.0) || !(t.sigma > 0.0) || t.max < t.min.max(1) {
            return Err(err("torrent_size", "need median > 0, sigma > 0 and max >= min"));
        }
        check_prob("ports.popular_mass", self.ports.popular_mass)?;

        let n = &self.network;
        if n.exit_relays == 0 {
            return Err(err("network.exit_relays", "must be at least 1"));
        }
        if n.tapped_exits > n.exit_relays {
            return Err(err("network.tapped_exits", "cannot exceed network.exit_relays"));
        }
        if n.exit_relays > 60_000 || n.middle_relays > 60_000 {
            return Err(err("network", "at most 60000 relays of each kind"));
        }
        if self.tracker.max_peers == 0 || self.tracker.interval == 0 {
            return Err(err("tracker", "max_peers and interval must be positive"));
        }
        let d = &self.dht;
        if d.nodes == 0 || d.max_values == 0 || d.stability_rounds == 0 || d.announce_interval == 0 {
            return Err(err("dht", "nodes, max_values, stability_rounds and announce_interval must be positive"));
        }
        if self.attack.crawl_epoch == 0 {
            return Err(err("attack.crawl_epoch", "must be positive"));
        }

        if self.groups.is_empty() || self.groups.len() > MAX_GROUPS {
            return Err(err("groups", alloc::format!("between 1 and {MAX_GROUPS} groups")));
        }
        check_sum("groups.tor_weight", self.groups.iter().map(|g| g.tor_weight))?;
        let baseline: Vec<f64> = self.groups.iter().filter_map(|g| g.baseline_weight).collect();
        if !baseline.is_empty() {
            check_sum("groups.baseline_weight", baseline)?;
        }
        for (i, g) in self.groups.iter().enumerate() {
            if self.groups[..i].iter().any(|o| o.label == g.label) {
                return Err(err(alloc::format!("groups[{i}].label"), "duplicate label"));
            }
        }

        let h = &self.http;
        check_prob("http.habit_prob", h.habit_prob)?;
        if h.habit_prob > 0.0 && (h.sites == 0 || h.sites_per_habit == 0 || h.mean_gap == 0 || h.categories.is_empty()) {
            return Err(err("http", "browsing needs sites, sites_per_habit, mean_gap and categories"));
        }
        if h.sites > 65_000 {
            return Err(err("http.sites", "at most 65000 sites"));
        }
        if !h.categories.is_empty() {
            check_sum("http.categories.weight", h.categories.iter().map(|c| c.weight))?;
        }

        let s = &self.studies.dht_fp;
        check_prob("studies.dht_fp.absent_prob", s.absent_prob)?;
        if s.sizes.iter().any(|&n| n == 0 || n > 60_000) {
            return Err(err("studies.dht_fp.sizes", "sizes must be in 1..=60000"));
        }
        Ok(())
    }

    /// Agent address `index` within group `group`.
    pub fn agent_ip(group: usize, index: u32) -> IpAddr {
        let h = index + 1;
        IpAddr::from([GROUP_BASE_OCTET + group as u8, (h >> 16) as u8, (h >> 8) as u8, h as u8])
    }

    /// The group a public address was allocated from.
    pub fn group_of(&self, ip: IpAddr) -> Option<usize> {
        match ip {
            IpAddr::V4(v4) => {
                let o = v4.octets()[0];
                let g = usize::from(o.checked_sub(GROUP_BASE_OCTET)?);
                (g < self.groups.len()).then_some(g)
            }
            IpAddr::V6(_) => None,
        }
    }
}
