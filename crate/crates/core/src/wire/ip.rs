use alloc::collections::BTreeSet;
use core::net::IpAddr;

use serde::Serialize;

/// What a self-reported IP field turns out to contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum IpClass {
    Empty,
    Invalid,
    Private,
    PublicExit,
    PublicNonExit,
}

impl IpClass {
    pub const ALL: [IpClass; 5] =
        [IpClass::Empty, IpClass::Invalid, IpClass::Private, IpClass::PublicExit, IpClass::PublicNonExit];

    pub fn label(self) -> &'static str {
        match self {
            IpClass::Empty => "empty",
            IpClass::Invalid => "invalid",
            IpClass::Private => "private",
            IpClass::PublicExit => "public_exit",
            IpClass::PublicNonExit => "public_non_exit",
        }
    }
}

/// RFC 1918, loopback and link-local for IPv4; ULA, loopback and link-local for IPv6.
pub fn is_private(ip: &IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => v4.is_private() || v4.is_loopback() || v4.is_link_local(),
        IpAddr::V6(v6) => v6.is_loopback() || v6.is_unique_local() || v6.is_unicast_link_local(),
    }
}

fn is_host_address(ip: &IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => !(v4.is_unspecified() || v4.is_multicast() || v4.is_broadcast()),
        IpAddr::V6(v6) => !(v6.is_unspecified() || v6.is_multicast()),
    }
}

/// Classifies a textual IP field. Total over all octet strings.
///
/// Unspecified, multicast and broadcast addresses parse but can never name a
/// peer, so they land in `Invalid`.
pub fn classify_ip(raw: &[u8], exit_ips: &BTreeSet<IpAddr>) -> IpClass {
    if raw.is_empty() {
        return IpClass::Empty;
    }
    let Some(ip) = core::str::from_utf8(raw).ok().and_then(|s| s.parse::<IpAddr>().ok()) else {
        return IpClass::Invalid;
    };
    classify_addr(&ip, exit_ips)
}

pub fn classify_addr(ip: &IpAddr, exit_ips: &BTreeSet<IpAddr>) -> IpClass {
    if !is_host_address(ip) {
        IpClass::Invalid
    } else if is_private(ip) {
        IpClass::Private
    } else if exit_ips.contains(ip) {
        IpClass::PublicExit
    } else {
        IpClass::PublicNonExit
    }
}
