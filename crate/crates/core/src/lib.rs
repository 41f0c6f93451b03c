//! Deterministic simulator of a BitTorrent swarm running over an
//! onion-routing overlay, with a malicious exit node.
//!
//! Everything here is `no_std` + `alloc` and free of IO; the `torswarm`
//! crate adds configuration files, the CLI and output writers.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adversary;
pub mod analytics;
pub mod bencode;
pub mod config;
pub mod overlay;
pub mod sim;
pub mod swarm;
pub mod wire;

/// Simulation time in whole seconds.
pub type SimTime = u64;
