//! Post-run statistics: CDFs, histograms, usage proportions, returning
//! users, group profiling and the port uniformity test.
//!
//! Everything here is a pure function of the adversary's logs plus the
//! scenario's synthetic labels. Nothing reads the ground-truth ledger.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::net::IpAddr;

use serde::{Serialize, Serializer};

use crate::adversary::{
    AttackLog, DhtMatchStats, DominoOutcome, HijackConnection, IpFieldTally, Method, ObservationIndex, Ratio, StreamKind,
};
use crate::wire::{Endpoint, InfoHash, PeerId};
use crate::SimTime;

pub const DAY: SimTime = 86_400;
pub const HOUR: SimTime = 3_600;

/// Upper 1% point of the standard normal.
pub const Z_99: f64 = 2.326_347_874_040_840_8;

/// Empirical CDF at each distinct sample value.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Cdf {
    pub points: Vec<CdfPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfPoint {
    pub x: u64,
    /// P[X <= x]
    pub p: f64,
}

impl Cdf {
    pub fn from_samples(samples: impl IntoIterator<Item = u64>) -> Self {
        Self::from_histogram(&histogram(samples))
    }

    pub fn from_histogram(h: &BTreeMap<u64, u64>) -> Self {
        let total: u64 = h.values().sum();
        let mut acc = 0;
        let points = h
            .iter()
            .map(|(&x, &c)| {
                acc += c;
                // The last point is exactly 1 because acc == total there.
                CdfPoint { x, p: acc as f64 / total as f64 }
            })
            .collect();
        Cdf { points }
    }

    /// P[X <= x]; 0 below the first point.
    pub fn at(&self, x: u64) -> f64 {
        self.points.iter().take_while(|pt| pt.x <= x).last().map_or(0.0, |pt| pt.p)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn histogram(samples: impl IntoIterator<Item = u64>) -> BTreeMap<u64, u64> {
    let mut h = BTreeMap::new();
    for s in samples {
        *h.entry(s).or_insert(0) += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsageShare {
    pub tracker_only: usize,
    pub content: usize,
    /// tracker_only / (tracker_only + content); N/A with no connections.
    pub tracker_only_fraction: Ratio,
}

impl UsageShare {
    fn from_sets(direct: &BTreeSet<PeerId>, via_tor: &BTreeSet<PeerId>) -> Self {
        // A peer id seen both ways (a mode change cannot happen, but a
        // shared id could) counts once, as content.
        let content = via_tor.len();
        let tracker_only = direct.difference(via_tor).count();
        UsageShare { tracker_only, content, tracker_only_fraction: Ratio::of(tracker_only, tracker_only + content) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsageEstimate {
    pub overall: UsageShare,
    pub per_day: Vec<(u64, UsageShare)>,
}

/// Tracker-only vs content share among hijacked peers, counted by unique
/// peer id overall and per `day`-long bucket.
///
/// A victim that connects back from its own address hides only from the
/// tracker; one that connects back from an exit hides from peers too.
pub fn usage_mode_estimate(connections: &[HijackConnection], day: SimTime) -> UsageEstimate {
    let day = day.max(1);
    let mut overall = (BTreeSet::new(), BTreeSet::new());
    let mut days: BTreeMap<u64, (BTreeSet<PeerId>, BTreeSet<PeerId>)> = BTreeMap::new();
    for c in connections {
        let d = days.entry(c.time / day).or_default();
        if c.via_tor {
            overall.1.insert(c.peer_id);
            d.1.insert(c.peer_id);
        } else {
            overall.0.insert(c.peer_id);
            d.0.insert(c.peer_id);
        }
    }
    UsageEstimate {
        overall: UsageShare::from_sets(&overall.0, &overall.1),
        per_day: days.into_iter().map(|(d, (a, b))| (d, UsageShare::from_sets(&a, &b))).collect(),
    }
}

/// Occurrences per IP, where a sighting counts only if it is at least a day
/// after the last counted one.
pub fn returning_ips(sightings: impl IntoIterator<Item = (IpAddr, SimTime)>) -> BTreeMap<IpAddr, u64> {
    let mut times: BTreeMap<IpAddr, Vec<SimTime>> = BTreeMap::new();
    for (ip, t) in sightings {
        times.entry(ip).or_default().push(t);
    }
    times
        .into_iter()
        .map(|(ip, mut ts)| {
            ts.sort_unstable();
            let mut last = ts[0];
            let mut n = 1;
            for &t in &ts[1..] {
                if t - last >= DAY {
                    n += 1;
                    last = t;
                }
            }
            (ip, n)
        })
        .collect()
}

/// A group's over-representation, or "-" when the baseline lacks it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Over {
    Ratio(f64),
    Missing,
}

impl Serialize for Over {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Over::Ratio(r) => s.serialize_f64(*r),
            Over::Missing => s.serialize_str("-"),
        }
    }
}

impl Over {
    pub fn value(self) -> Option<f64> {
        match self {
            Over::Ratio(r) => Some(r),
            Over::Missing => None,
        }
    }
}

/// Share of each group among overlay users divided by its share among the
/// baseline population. Both sides are normalized by their own totals.
pub fn over_representation(groups: &BTreeMap<String, f64>, baseline: &BTreeMap<String, f64>) -> BTreeMap<String, Over> {
    let gt: f64 = groups.values().sum();
    let bt: f64 = baseline.values().sum();
    groups
        .iter()
        .map(|(label, &g)| {
            let over = match baseline.get(label) {
                Some(&b) if b > 0.0 && gt > 0.0 => Over::Ratio((g / gt) / (b / bt)),
                _ => Over::Missing,
            };
            (label.clone(), over)
        })
        .collect()
}

/// Attributed HTTP streams per compromised IP. IPs with no HTTP stream
/// contribute zero.
pub fn cooccurrence_cdf(domino: &DominoOutcome, index: &ObservationIndex) -> Cdf {
    let mut per_ip: BTreeMap<IpAddr, u64> = BTreeMap::new();
    for (sid, a) in &domino.attributions {
        let http = index.streams.get(sid).is_some_and(|s| s.kind == StreamKind::Http);
        *per_ip.entry(a.ip).or_insert(0) += u64::from(http);
    }
    Cdf::from_samples(per_ip.into_values())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquare {
    pub samples: usize,
    pub bins: usize,
    pub statistic: f64,
    pub dof: usize,
    /// Critical value at alpha = 0.01.
    pub critical: f64,
    pub uniform: bool,
}

/// Wilson-Hilferty approximation to the chi-square quantile with `dof`
/// degrees of freedom at standard normal quantile `z`.
pub fn chi_square_quantile(dof: usize, z: f64) -> f64 {
    let k = dof as f64;
    let a = 2.0 / (9.0 * k);
    k * libm::pow(1.0 - a + z * libm::sqrt(a), 3.0)
}

/// Pearson test of `values` against the uniform law on `[lo, hi]`, with
/// `bins` equal-width bins. The range width must be divisible by `bins`.
pub fn chi_square_uniform(values: &[u16], lo: u16, hi: u16, bins: usize) -> ChiSquare {
    let width = usize::from(hi - lo) + 1;
    assert!(bins >= 2 && width % bins == 0, "range of {width} does not split into {bins} bins");
    let per = width / bins;
    let mut counts = alloc::vec![0u64; bins];
    let mut n = 0usize;
    for &v in values.iter().filter(|&&v| (lo..=hi).contains(&v)) {
        counts[usize::from(v - lo) / per] += 1;
        n += 1;
    }
    let expected = n as f64 / bins as f64;
    let statistic = if n == 0 {
        0.0
    } else {
        counts.iter().map(|&c| (c as f64 - expected) * (c as f64 - expected) / expected).sum()
    };
    let dof = bins - 1;
    let critical = chi_square_quantile(dof, Z_99);
    ChiSquare { samples: n, bins, statistic, dof, critical, uniform: statistic <= critical }
}

/// Port range the uniformity test covers: 64 bins of 1008 ports.
pub const PORT_TEST_RANGE: (u16, u16, usize) = (1024, 65535, 64);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortReport {
    /// Listening ports of distinct peer ids, in 64 equal bins over [1024, 65535].
    pub bins: Vec<u64>,
    pub below_range: u64,
    pub popular: BTreeMap<u16, u64>,
    /// Uniformity of the ports outside the popular set.
    pub uniformity: ChiSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub label: String,
    pub ips: u64,
    pub fraction: f64,
    pub baseline: Option<f64>,
    pub over: Over,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HijackSummary {
    pub connections: usize,
    pub direct: usize,
    pub via_tor: usize,
    pub piece_confirmed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominoSummary {
    pub window: SimTime,
    pub attributed_streams: usize,
    pub by_method: BTreeMap<&'static str, usize>,
    /// Intra-linked streams over all domino-linked streams.
    pub intra_share: Ratio,
    pub conflicts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub ip_fields: IpFieldTally,
    pub port_histogram: PortReport,
    pub torrent_size_cdf: Cdf,
    pub circuits_per_ip_cdf: Cdf,
    pub streams_per_ip_cdf: Cdf,
    pub usage_mode: UsageEstimate,
    /// (hour, distinct compromised IPs up to the end of that hour)
    pub unique_ips_over_time: Vec<(u64, u64)>,
    /// occurrences -> number of IPs
    pub ip_occurrence_histogram: BTreeMap<u64, u64>,
    pub group_distribution: Vec<GroupRow>,
    pub http_category_histogram: BTreeMap<String, BTreeMap<String, u64>>,
    pub http_bt_cooccurrence_cdf: Cdf,
    /// Compromised IPs with at least one HTTP stream.
    pub http_bt_both_fraction: Ratio,
    pub hijack: HijackSummary,
    pub dht: DhtMatchStats,
    pub domino: DominoSummary,
}

/// Synthetic labels the report joins against.
pub struct Labels<'a> {
    /// Group label of an IP, if it belongs to a labelled population.
    pub group_of: &'a dyn Fn(IpAddr) -> Option<usize>,
    pub groups: &'a [(String, Option<f64>)],
    /// Category label of an HTTP destination.
    pub category_of: &'a dyn Fn(&Endpoint) -> Option<String>,
    pub popular_ports: &'a [u16],
    pub duration: SimTime,
}

pub fn build_report(log: &AttackLog, index: &ObservationIndex, domino: &DominoOutcome, labels: &Labels<'_>) -> Report {
    let attributed = &domino.attributions;

    let mut circuits: BTreeMap<IpAddr, BTreeSet<_>> = BTreeMap::new();
    let mut streams: BTreeMap<IpAddr, u64> = BTreeMap::new();
    let mut sightings = Vec::new();
    let mut http: BTreeMap<IpAddr, u64> = BTreeMap::new();
    let mut categories: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for (sid, a) in attributed {
        let Some(info) = index.streams.get(sid) else { continue };
        circuits.entry(a.ip).or_default().insert(info.circuit);
        *streams.entry(a.ip).or_insert(0) += 1;
        sightings.push((a.ip, info.first_seen));
        let h = http.entry(a.ip).or_insert(0);
        if info.kind == StreamKind::Http {
            *h += 1;
            let group = (labels.group_of)(a.ip).and_then(|g| labels.groups.get(g)).map_or("unlabelled", |g| g.0.as_str());
            let cat = (labels.category_of)(&info.destination).unwrap_or_else(|| String::from("unknown"));
            *categories.entry(String::from(group)).or_default().entry(cat).or_insert(0) += 1;
        }
    }

    let mut first_seen: BTreeMap<IpAddr, SimTime> = BTreeMap::new();
    for &(ip, t) in &sightings {
        first_seen.entry(ip).and_modify(|f| *f = (*f).min(t)).or_insert(t);
    }
    let mut by_hour = histogram(first_seen.values().map(|t| t / HOUR));
    let hours = labels.duration.div_ceil(HOUR);
    let mut acc = 0;
    let unique_ips_over_time = (0..hours.max(1))
        .map(|h| {
            acc += by_hour.remove(&h).unwrap_or(0);
            (h, acc)
        })
        .collect();

    let returning = returning_ips(sightings.iter().copied());

    let mut group_counts: BTreeMap<usize, u64> = BTreeMap::new();
    for ip in first_seen.keys() {
        if let Some(g) = (labels.group_of)(*ip) {
            *group_counts.entry(g).or_insert(0) += 1;
        }
    }
    let tor: BTreeMap<String, f64> =
        labels.groups.iter().enumerate().map(|(i, g)| (g.0.clone(), group_counts.get(&i).copied().unwrap_or(0) as f64)).collect();
    let base: BTreeMap<String, f64> = labels.groups.iter().filter_map(|g| g.1.map(|b| (g.0.clone(), b))).collect();
    let over = over_representation(&tor, &base);
    let labelled: u64 = group_counts.values().sum();
    let group_distribution = labels
        .groups
        .iter()
        .map(|(label, baseline)| {
            let ips = tor[label] as u64;
            GroupRow {
                label: label.clone(),
                ips,
                fraction: if labelled == 0 { 0.0 } else { ips as f64 / labelled as f64 },
                baseline: *baseline,
                over: over[label],
            }
        })
        .collect();

    let both = http.values().filter(|&&n| n > 0).count();

    let mut ports_seen: BTreeMap<PeerId, u16> = BTreeMap::new();
    let mut anonymous_ports = Vec::new();
    for info in index.streams.values() {
        let Some(p) = info.listen_port else { continue };
        match info.peer_ids.first() {
            Some(pid) => {
                ports_seen.entry(*pid).or_insert(p);
            }
            None => anonymous_ports.push(p),
        }
    }
    let port_histogram = port_report(ports_seen.values().copied().chain(anonymous_ports), labels.popular_ports);

    let mut latest: BTreeMap<InfoHash, (SimTime, usize)> = BTreeMap::new();
    for &(t, ih, n) in &log.crawls {
        latest.insert(ih, (t, n));
    }

    Report {
        ip_fields: log.tally.clone(),
        port_histogram,
        torrent_size_cdf: Cdf::from_samples(latest.values().map(|&(_, n)| n as u64)),
        circuits_per_ip_cdf: Cdf::from_samples(circuits.values().map(|c| c.len() as u64)),
        streams_per_ip_cdf: Cdf::from_samples(streams.values().copied()),
        usage_mode: usage_mode_estimate(&log.connections, DAY),
        unique_ips_over_time,
        ip_occurrence_histogram: histogram(returning.into_values()),
        group_distribution,
        http_category_histogram: categories,
        http_bt_cooccurrence_cdf: Cdf::from_samples(http.values().copied()),
        http_bt_both_fraction: Ratio::of(both, http.len()),
        hijack: HijackSummary {
            connections: log.connections.len(),
            direct: log.connections.iter().filter(|c| !c.via_tor).count(),
            via_tor: log.connections.iter().filter(|c| c.via_tor).count(),
            piece_confirmed: log.connections.iter().filter(|c| c.piece_confirmed).count(),
        },
        dht: log.dht.clone(),
        domino: DominoSummary {
            window: domino.window,
            attributed_streams: attributed.len(),
            by_method: Method::ALL.iter().map(|m| (m.label(), domino.count(*m))).collect(),
            intra_share: Ratio(domino.intra_share()),
            conflicts: domino.conflicts.len(),
        },
    }
}

pub fn port_report(ports: impl IntoIterator<Item = u16>, popular: &[u16]) -> PortReport {
    let (lo, hi, bins) = PORT_TEST_RANGE;
    let per = (usize::from(hi - lo) + 1) / bins;
    let mut counts = alloc::vec![0u64; bins];
    let mut below = 0;
    let mut pop = BTreeMap::new();
    let mut rest = Vec::new();
    for p in ports {
        if p < lo {
            below += 1;
        } else {
            counts[usize::from(p - lo) / per] += 1;
        }
        if popular.contains(&p) {
            *pop.entry(p).or_insert(0) += 1;
        } else {
            rest.push(p);
        }
    }
    PortReport { bins: counts, below_range: below, popular: pop, uniformity: chi_square_uniform(&rest, lo, hi, bins) }
}
