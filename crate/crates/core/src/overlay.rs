//! Onion-routing overlay.
//!
//! Circuits are three relays, the last one an exit. Streams are multiplexed
//! onto a client's circuits under the ten-minute rule: a circuit accepts new
//! streams only while its first stream is younger than [`CIRCUIT_REUSE_WINDOW`].
//! Onion layers are not modeled as ciphertext; only the exit ever sees a
//! payload, and what it sees is an [`ExitObservation`].

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::net::IpAddr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::LedgerKey;
use crate::wire::Endpoint;
use crate::SimTime;

/// New streams may join a circuit only while its first stream is younger than this.
pub const CIRCUIT_REUSE_WINDOW: SimTime = 600;
pub const HOPS: usize = 3;

const EPHEMERAL_PORTS: core::ops::RangeInclusive<u16> = 32768..=60999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RelayId(pub u32);
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ClientId(pub u32);
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CircuitId(pub u64);
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct StreamId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Relay {
    pub id: RelayId,
    pub ip: IpAddr,
    pub exit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlayConfig {
    /// Clean circuits a client keeps built ahead of need.
    pub circuit_pool_size: usize,
    /// Seconds between asking for a stream and the stream being open.
    pub stream_setup_latency: SimTime,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        OverlayConfig { circuit_pool_size: 2, stream_setup_latency: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum OverlayError {
    #[error("no exit relays available")]
    NoRelaysAvailable,
    #[error("stream {0:?} is closed")]
    StreamClosed(StreamId),
    #[error("unknown stream {0:?}")]
    UnknownStream(StreamId),
    #[error("unknown client {0:?}")]
    UnknownClient(ClientId),
}

/// Public view of a circuit. The owning client is deliberately absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Circuit {
    pub id: CircuitId,
    pub hops: [RelayId; HOPS],
    pub created_at: SimTime,
}

/// A stream as its opener sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    pub id: StreamId,
    pub circuit_id: CircuitId,
    pub destination: Endpoint,
    pub opened_at: SimTime,
    pub encrypted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToDestination,
    ToClient,
}

/// Application bytes as the exit sees them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Plaintext(Vec<u8>),
    /// End-to-end encrypted application data; only its length is visible.
    Opaque(usize),
}

impl Payload {
    pub fn plaintext(&self) -> Option<&[u8]> {
        match self {
            Payload::Plaintext(b) => Some(b),
            Payload::Opaque(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::Plaintext(b) => b.len(),
            Payload::Opaque(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything an exit relay learns from one cell burst. Carries no client
/// identity of any kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExitObservation {
    pub time: SimTime,
    pub exit_relay: RelayId,
    pub circuit_id: CircuitId,
    pub stream_id: StreamId,
    pub destination: Endpoint,
    pub direction: Direction,
    pub payload: Payload,
}

/// Result of [`Overlay::send`].
#[derive(Debug, Clone)]
pub struct Sent {
    /// Source address the destination sees: the exit's IP and an ephemeral port.
    pub source: Endpoint,
    pub observation: ExitObservation,
    /// Whether the exit carries an adversary tap and logged the observation.
    pub tapped: bool,
}

/// A datagram that bypasses the overlay entirely.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datagram {
    pub source: Endpoint,
    pub destination: Endpoint,
    pub payload: Vec<u8>,
}

/// Sealed record of who opened what. Written by the overlay; readable only
/// with a [`LedgerKey`], which only the evaluator can mint.
#[derive(Debug, Default, Clone)]
pub struct GroundTruthLedger {
    stream_owner: Vec<(IpAddr, ClientId)>,
    circuit_owner: Vec<ClientId>,
    stream_circuit: Vec<CircuitId>,
    circuit_exit: Vec<RelayId>,
    tapped: BTreeSet<RelayId>,
}

impl GroundTruthLedger {
    fn record_circuit(&mut self, id: CircuitId, client: ClientId, exit: RelayId) {
        debug_assert_eq!(id.0 as usize, self.circuit_owner.len());
        self.circuit_owner.push(client);
        self.circuit_exit.push(exit);
    }

    fn record_stream(&mut self, id: StreamId, circuit: CircuitId, ip: IpAddr, client: ClientId) {
        debug_assert_eq!(id.0 as usize, self.stream_owner.len());
        self.stream_owner.push((ip, client));
        self.stream_circuit.push(circuit);
    }

    pub fn stream_count(&self) -> usize {
        self.stream_owner.len()
    }

    pub fn stream_owner(&self, _key: &LedgerKey, id: StreamId) -> Option<(IpAddr, ClientId)> {
        self.stream_owner.get(id.0 as usize).copied()
    }

    pub fn circuit_owner(&self, _key: &LedgerKey, id: CircuitId) -> Option<ClientId> {
        self.circuit_owner.get(id.0 as usize).copied()
    }

    pub fn stream_circuit(&self, _key: &LedgerKey, id: StreamId) -> Option<CircuitId> {
        self.stream_circuit.get(id.0 as usize).copied()
    }

    /// Streams whose circuit left through a tapped exit.
    pub fn observable_streams<'a>(&'a self, _key: &'a LedgerKey) -> impl Iterator<Item = StreamId> + 'a {
        self.stream_circuit
            .iter()
            .enumerate()
            .filter(|(_, c)| self.tapped.contains(&self.circuit_exit[c.0 as usize]))
            .map(|(i, _)| StreamId(i as u64))
    }
}

#[derive(Debug)]
struct ClientState {
    ip: IpAddr,
    /// Circuits that have carried a stream, most recent last. Pruned once
    /// they can no longer take new streams.
    dirty: Vec<CircuitId>,
    clean: Vec<CircuitId>,
    round_robin: usize,
}

#[derive(Debug)]
struct CircuitState {
    hops: [RelayId; HOPS],
    created_at: SimTime,
    first_stream_at: Option<SimTime>,
}

#[derive(Debug)]
struct StreamState {
    circuit: CircuitId,
    destination: Endpoint,
    opened_at: SimTime,
    encrypted: bool,
    source_port: u16,
    closed: bool,
}

#[derive(Debug)]
pub struct Overlay {
    config: OverlayConfig,
    relays: Vec<Relay>,
    exits: Vec<RelayId>,
    exit_ips: BTreeSet<IpAddr>,
    taps: BTreeSet<RelayId>,
    clients: Vec<ClientState>,
    circuits: Vec<CircuitState>,
    streams: Vec<StreamState>,
    next_ephemeral: Vec<u16>,
    log: Vec<ExitObservation>,
    ledger: GroundTruthLedger,
    rng: ChaCha8Rng,
}

impl Overlay {
    /// `relays[i]` gets `RelayId(i)`.
    pub fn new(relays: Vec<(IpAddr, bool)>, config: OverlayConfig, seed: u64) -> Self {
        let relays: Vec<Relay> = relays
            .into_iter()
            .enumerate()
            .map(|(i, (ip, exit))| Relay { id: RelayId(i as u32), ip, exit })
            .collect();
        let exits: Vec<RelayId> = relays.iter().filter(|r| r.exit).map(|r| r.id).collect();
        let exit_ips = relays.iter().filter(|r| r.exit).map(|r| r.ip).collect();
        let next_ephemeral = alloc::vec![*EPHEMERAL_PORTS.start(); relays.len()];
        Overlay {
            config,
            relays,
            exits,
            exit_ips,
            taps: BTreeSet::new(),
            clients: Vec::new(),
            circuits: Vec::new(),
            streams: Vec::new(),
            next_ephemeral,
            log: Vec::new(),
            ledger: GroundTruthLedger::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn relays(&self) -> &[Relay] {
        &self.relays
    }

    pub fn exit_relays(&self) -> &[RelayId] {
        &self.exits
    }

    /// The published exit list.
    pub fn exit_ips(&self) -> &BTreeSet<IpAddr> {
        &self.exit_ips
    }

    pub fn relay_ip(&self, id: RelayId) -> IpAddr {
        self.relays[id.0 as usize].ip
    }

    /// Installs an observation tap on an exit relay.
    pub fn tap(&mut self, exit: RelayId) {
        assert!(self.relays[exit.0 as usize].exit, "only exit relays can be tapped");
        self.taps.insert(exit);
        self.ledger.tapped.insert(exit);
    }

    pub fn is_tapped(&self, relay: RelayId) -> bool {
        self.taps.contains(&relay)
    }

    pub fn register_client(&mut self, ip: IpAddr) -> ClientId {
        let id = ClientId(self.clients.len() as u32);
        self.clients.push(ClientState { ip, dirty: Vec::new(), clean: Vec::new(), round_robin: 0 });
        id
    }

    pub fn client_ip(&self, client: ClientId) -> Option<IpAddr> {
        self.clients.get(client.0 as usize).map(|c| c.ip)
    }

    pub fn circuit(&self, id: CircuitId) -> Option<Circuit> {
        self.circuits.get(id.0 as usize).map(|c| Circuit { id, hops: c.hops, created_at: c.created_at })
    }

    pub fn stream(&self, id: StreamId) -> Option<Stream> {
        self.streams.get(id.0 as usize).map(|s| Stream {
            id,
            circuit_id: s.circuit,
            destination: s.destination,
            opened_at: s.opened_at,
            encrypted: s.encrypted,
        })
    }

    pub fn exit_of(&self, circuit: CircuitId) -> RelayId {
        self.circuits[circuit.0 as usize].hops[HOPS - 1]
    }

    /// Observations collected by all taps, in emission order.
    pub fn observations(&self) -> &[ExitObservation] {
        &self.log
    }

    pub fn take_observations(&mut self) -> Vec<ExitObservation> {
        core::mem::take(&mut self.log)
    }

    pub fn ledger(&self) -> &GroundTruthLedger {
        &self.ledger
    }

    pub fn into_parts(self) -> (Vec<ExitObservation>, GroundTruthLedger) {
        (self.log, self.ledger)
    }

    pub fn circuit_count(&self) -> usize {
        self.circuits.len()
    }

    pub fn stream_count(&self) -> usize {
        self.streams.len()
    }

    fn build_circuit(&mut self, client: ClientId, now: SimTime) -> Result<CircuitId, OverlayError> {
        if self.exits.is_empty() || self.relays.len() < HOPS {
            return Err(OverlayError::NoRelaysAvailable);
        }
        let exit = *self.exits.choose(&mut self.rng).expect("non-empty");
        let mut hops = [exit; HOPS];
        for i in 0..HOPS - 1 {
            hops[i] = loop {
                let r = RelayId(self.rng.random_range(0..self.relays.len() as u32));
                if !hops[..i].contains(&r) && r != exit {
                    break r;
                }
            };
        }
        let id = CircuitId(self.circuits.len() as u64);
        self.circuits.push(CircuitState { hops, created_at: now, first_stream_at: None });
        self.ledger.record_circuit(id, client, exit);
        Ok(id)
    }

    fn pick_circuit(&mut self, client: ClientId, now: SimTime) -> Result<CircuitId, OverlayError> {
        let circuits = &self.circuits;
        let state = &mut self.clients[client.0 as usize];
        state.dirty.retain(|c| {
            let first = circuits[c.0 as usize].first_stream_at.expect("dirty circuits have carried a stream");
            now.saturating_sub(first) < CIRCUIT_REUSE_WINDOW
        });
        if !state.dirty.is_empty() {
            let i = state.round_robin % state.dirty.len();
            state.round_robin = state.round_robin.wrapping_add(1);
            return Ok(state.dirty[i]);
        }
        let fresh = match state.clean.pop() {
            Some(c) => c,
            None => self.build_circuit(client, now)?,
        };
        self.circuits[fresh.0 as usize].first_stream_at = Some(now);
        self.clients[client.0 as usize].dirty.push(fresh);
        while self.clients[client.0 as usize].clean.len() < self.config.circuit_pool_size {
            let c = self.build_circuit(client, now)?;
            // Pool is used LIFO; keep the oldest on top.
            self.clients[client.0 as usize].clean.insert(0, c);
        }
        Ok(fresh)
    }

    /// Opens a stream from `client` to `destination` on an eligible circuit,
    /// building one if needed.
    pub fn open_stream(
        &mut self,
        client: ClientId,
        destination: Endpoint,
        now: SimTime,
        encrypted: bool,
    ) -> Result<Stream, OverlayError> {
        let ip = self.client_ip(client).ok_or(OverlayError::UnknownClient(client))?;
        let circuit = self.pick_circuit(client, now)?;
        let exit = self.exit_of(circuit);
        let port = self.next_ephemeral[exit.0 as usize];
        self.next_ephemeral[exit.0 as usize] =
            if port == *EPHEMERAL_PORTS.end() { *EPHEMERAL_PORTS.start() } else { port + 1 };
        let id = StreamId(self.streams.len() as u64);
        let opened_at = now + self.config.stream_setup_latency;
        self.streams.push(StreamState { circuit, destination, opened_at, encrypted, source_port: port, closed: false });
        self.ledger.record_stream(id, circuit, ip, client);
        Ok(Stream { id, circuit_id: circuit, destination, opened_at, encrypted })
    }

    pub fn close_stream(&mut self, id: StreamId) -> Result<(), OverlayError> {
        let s = self.streams.get_mut(id.0 as usize).ok_or(OverlayError::UnknownStream(id))?;
        s.closed = true;
        Ok(())
    }

    /// Moves `payload` across the stream in `direction`. The exit sees it;
    /// a tapped exit also logs it.
    pub fn send(
        &mut self,
        stream: StreamId,
        payload: &[u8],
        direction: Direction,
        now: SimTime,
    ) -> Result<Sent, OverlayError> {
        let s = self.streams.get(stream.0 as usize).ok_or(OverlayError::UnknownStream(stream))?;
        if s.closed {
            return Err(OverlayError::StreamClosed(stream));
        }
        let exit = self.circuits[s.circuit.0 as usize].hops[HOPS - 1];
        let observation = ExitObservation {
            time: now,
            exit_relay: exit,
            circuit_id: s.circuit,
            stream_id: stream,
            destination: s.destination,
            direction,
            payload: if s.encrypted { Payload::Opaque(payload.len()) } else { Payload::Plaintext(payload.to_vec()) },
        };
        let source = Endpoint::new(self.relays[exit.0 as usize].ip, s.source_port);
        let tapped = self.taps.contains(&exit);
        if tapped {
            self.log.push(observation.clone());
        }
        Ok(Sent { source, observation, tapped })
    }

    /// UDP bypasses the overlay: the datagram leaves from the client's own
    /// address and no exit sees it.
    pub fn udp_send(&self, client: ClientId, source_port: u16, destination: Endpoint, payload: Vec<u8>) -> Result<Datagram, OverlayError> {
        let ip = self.client_ip(client).ok_or(OverlayError::UnknownClient(client))?;
        Ok(Datagram { source: Endpoint::new(ip, source_port), destination, payload })
    }
}
