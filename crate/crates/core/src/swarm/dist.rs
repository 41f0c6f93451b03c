//! Sampling distributions for torrent sizes and listening ports.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

/// Lowest port a client picks at install time.
pub const MIN_LISTEN_PORT: u16 = 1024;

/// Ports seen far more often than a uniform pick would give.
pub const POPULAR_PORTS: [u16; 6] = [80, 443, 6881, 16884, 35691, 51413];

/// z such that P[Z < z] = 0.9 for a standard normal.
pub const Z_90: f64 = 1.281_551_565_544_600_4;

/// Discrete log-normal torrent sizes, resampled above `max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TorrentSizeConfig {
    pub median: f64,
    pub sigma: f64,
    pub min: u32,
    pub max: u32,
}

impl Default for TorrentSizeConfig {
    /// Median 120 with sigma set so that 90% of torrents have fewer than 1,000 members.
    fn default() -> Self {
        TorrentSizeConfig { median: 120.0, sigma: libm::log(1000.0 / 120.0) / Z_90, min: 1, max: 20_000 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TorrentSizeDist {
    inner: LogNormal<f64>,
    min: u32,
    max: u32,
}

impl TorrentSizeDist {
    pub fn new(cfg: &TorrentSizeConfig) -> Self {
        let inner = LogNormal::new(libm::log(cfg.median), cfg.sigma).expect("validated torrent size parameters");
        TorrentSizeDist { inner, min: cfg.min.max(1), max: cfg.max }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        loop {
            let x = libm::round(self.inner.sample(rng));
            if x <= f64::from(self.max) {
                return (x as u32).max(self.min);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortConfig {
    /// Probability that a client listens on one of `popular` instead of a uniform pick.
    pub popular_mass: f64,
    pub popular: Vec<u16>,
}

impl Default for PortConfig {
    fn default() -> Self {
        PortConfig { popular_mass: 0.10, popular: POPULAR_PORTS.to_vec() }
    }
}

impl PortConfig {
    /// Uniform on [1024, 65535] unless the popular-port coin comes up.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u16 {
        if !self.popular.is_empty() && rng.random_bool(self.popular_mass) {
            self.popular[rng.random_range(0..self.popular.len())]
        } else {
            rng.random_range(MIN_LISTEN_PORT..=u16::MAX)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ninety_percent_under_a_thousand() {
        let d = TorrentSizeDist::new(&TorrentSizeConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50_000;
        let under = (0..n).filter(|_| d.sample(&mut rng) < 1000).count();
        let p = under as f64 / n as f64;
        assert!((p - 0.9).abs() < 0.01, "{p}");
    }

    #[test]
    fn sizes_respect_bounds() {
        let cfg = TorrentSizeConfig { max: 500, min: 3, ..Default::default() };
        let d = TorrentSizeDist::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let s = d.sample(&mut rng);
            assert!((3..=500).contains(&s));
        }
    }

    #[test]
    fn zero_popular_mass_never_hits_low_ports() {
        let cfg = PortConfig { popular_mass: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..10_000).all(|_| cfg.sample(&mut rng) >= MIN_LISTEN_PORT));
    }
}
