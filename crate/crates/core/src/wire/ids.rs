use core::fmt;
use core::net::{IpAddr, Ipv4Addr};

use rand::Rng;
use serde::{Serialize, Serializer};

use super::WireError;

macro_rules! id20 {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; 20]);

        impl $name {
            pub const LEN: usize = 20;

            pub fn from_slice(b: &[u8]) -> Result<Self, WireError> {
                <[u8; 20]>::try_from(b)
                    .map($name)
                    .map_err(|_| WireError::Malformed(concat!(stringify!($name), " must be 20 octets")))
            }

            pub fn as_bytes(&self) -> &[u8; 20] {
                &self.0
            }

            pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
                let mut b = [0u8; 20];
                rng.fill(&mut b[..]);
                $name(b)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                for b in self.0 {
                    write!(f, "{b:02x}")?;
                }
                Ok(())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), self)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }
    };
}

id20!(
    /// 160-bit torrent identifier.
    InfoHash
);
id20!(
    /// 160-bit DHT node identifier.
    NodeId
);
id20!(
    /// Client identifier: a printable client/version tag followed by random octets.
    PeerId
);

/// Azureus-style client tags the simulated clients draw from.
pub const CLIENT_CATALOG: &[&str] = &[
    "-UT2210-", // uTorrent
    "-BS7760-", // BitSpirit
    "-LT0F00-", // libtorrent (Rasterbar)
    "-lt0D80-", // libTorrent (rakshasa)
    "-AZ4604-", // Vuze
    "-TR2220-", // Transmission
    "-qB2720-", // qBittorrent
];

impl PeerId {
    /// Builds a peer id from a catalog tag and random suffix octets.
    pub fn generate<R: Rng + ?Sized>(tag: &str, rng: &mut R) -> Self {
        let tag = tag.as_bytes();
        assert!(tag.len() < Self::LEN, "client tag longer than a peer id");
        let mut b = [0u8; 20];
        b[..tag.len()].copy_from_slice(tag);
        rng.fill(&mut b[tag.len()..]);
        PeerId(b)
    }

    /// The leading `-XXnnnn-` tag, if the id follows the Azureus convention.
    pub fn client_tag(&self) -> Option<&str> {
        if self.0[0] == b'-' && self.0[7] == b'-' {
            core::str::from_utf8(&self.0[..8]).ok()
        } else {
            None
        }
    }
}

/// An (IP, port) pair as carried by trackers, the DHT and peer connections.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Endpoint {
    pub ip: IpAddr,
    pub port: u16,
}

impl Endpoint {
    pub const fn new(ip: IpAddr, port: u16) -> Self {
        Endpoint { ip, port }
    }

    pub const fn v4(a: u8, b: u8, c: u8, d: u8, port: u16) -> Self {
        Endpoint { ip: IpAddr::V4(Ipv4Addr::new(a, b, c, d)), port }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ip {
            IpAddr::V4(ip) => write!(f, "{ip}:{}", self.port),
            IpAddr::V6(ip) => write!(f, "[{ip}]:{}", self.port),
        }
    }
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
