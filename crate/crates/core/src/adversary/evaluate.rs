//! Scoring attributions against the ground-truth ledger.
//!
//! This module is the only holder of a [`LedgerKey`]. Everything else in the
//! adversary works from observations alone.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Serialize, Serializer};

use super::domino::{DominoOutcome, ObservationIndex, StreamKind};
use super::{DeanonRecord, Method};
use crate::overlay::{ClientId, GroundTruthLedger, StreamId};

/// Capability to read the [`GroundTruthLedger`]. Cannot be built outside
/// this module:
///
/// ```compile_fail
/// let _ = torswarm_core::adversary::LedgerKey { _sealed: () };
/// ```
///
/// ```compile_fail
/// use torswarm_core::overlay::{GroundTruthLedger, StreamId};
/// fn peek(l: &GroundTruthLedger) {
///     let _ = l.stream_owner(StreamId(0));
/// }
/// ```
#[derive(Debug)]
pub struct LedgerKey {
    _sealed: (),
}

/// A proportion that may be undefined (empty denominator). Serialized as a
/// number or as the string `"N/A"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ratio(pub Option<f64>);

impl Ratio {
    pub fn of(num: usize, den: usize) -> Self {
        Ratio((den > 0).then(|| num as f64 / den as f64))
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("N/A"),
        }
    }
}

impl core::fmt::Display for Ratio {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.6}"),
            None => f.write_str("N/A"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MethodStats {
    pub records: usize,
    pub correct_records: usize,
    pub record_precision: Ratio,
    /// Streams whose final attribution carries this method.
    pub streams: usize,
    pub correct_streams: usize,
    pub stream_precision: Ratio,
    /// Correct streams over all observed streams.
    pub recall: Ratio,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Evaluation {
    pub observed_streams: usize,
    pub attributed_streams: usize,
    pub correct_streams: usize,
    pub precision: Ratio,
    pub recall: Ratio,
    pub per_method: BTreeMap<&'static str, MethodStats>,
    /// Over streams that share a circuit with a correctly claimed stream,
    /// the fraction that received an attribution.
    pub intra_recall: Ratio,
    pub intra_share: Ratio,
    pub conflicts: usize,
    /// Distinct clients with at least one correctly attributed stream.
    pub deanonymized_clients: usize,
    /// Of those, how many had an observed plaintext HTTP stream.
    pub deanonymized_http_clients: usize,
    /// Per record, in input order: every supporting stream belongs to the
    /// claimed address.
    #[serde(skip)]
    pub record_correct: Vec<bool>,
}

pub fn evaluate(
    records: &[DeanonRecord],
    domino: &DominoOutcome,
    index: &ObservationIndex,
    ledger: &GroundTruthLedger,
) -> Evaluation {
    let key = LedgerKey { _sealed: () };
    let owner = |s: StreamId| ledger.stream_owner(&key, s);

    let record_correct: Vec<bool> = records
        .iter()
        .map(|r| r.supporting_streams.iter().all(|s| owner(*s).is_some_and(|(ip, _)| ip == r.claimed_ip)))
        .collect();

    let mut per_method: BTreeMap<Method, MethodStats> = Method::ALL.iter().map(|m| (*m, MethodStats::default())).collect();
    for (r, ok) in records.iter().zip(&record_correct) {
        let m = per_method.get_mut(&r.method).expect("all methods present");
        m.records += 1;
        m.correct_records += usize::from(*ok);
    }

    let observed = index.stream_count();
    let mut correct_total = 0;
    let mut clients: BTreeSet<ClientId> = BTreeSet::new();
    for (s, a) in &domino.attributions {
        let m = per_method.get_mut(&a.method).expect("all methods present");
        m.streams += 1;
        if let Some((_, client)) = owner(*s).filter(|(ip, _)| *ip == a.ip) {
            m.correct_streams += 1;
            correct_total += 1;
            clients.insert(client);
        }
    }
    for m in per_method.values_mut() {
        m.record_precision = Ratio::of(m.correct_records, m.records);
        m.stream_precision = Ratio::of(m.correct_streams, m.streams);
        m.recall = Ratio::of(m.correct_streams, observed);
    }

    let mut same_circuit: BTreeSet<StreamId> = BTreeSet::new();
    for (r, ok) in records.iter().zip(&record_correct) {
        if !*ok {
            continue;
        }
        for s in &r.supporting_streams {
            if let Some(info) = index.streams.get(s) {
                same_circuit.extend(index.circuits[&info.circuit].iter().copied());
            }
        }
    }
    let covered = same_circuit.iter().filter(|s| domino.attributions.contains_key(s)).count();

    let http_clients: BTreeSet<ClientId> = index
        .streams
        .iter()
        .filter(|(_, i)| i.kind == StreamKind::Http)
        .filter_map(|(s, _)| owner(*s).map(|(_, c)| c))
        .filter(|c| clients.contains(c))
        .collect();

    Evaluation {
        observed_streams: observed,
        attributed_streams: domino.attributions.len(),
        correct_streams: correct_total,
        precision: Ratio::of(correct_total, domino.attributions.len()),
        recall: Ratio::of(correct_total, observed),
        per_method: per_method.into_iter().map(|(m, s)| (m.label(), s)).collect(),
        intra_recall: Ratio::of(covered, same_circuit.len()),
        intra_share: Ratio(domino.intra_share()),
        conflicts: domino.conflicts.len(),
        deanonymized_clients: clients.len(),
        deanonymized_http_clients: http_clients.len(),
        record_correct,
    }
}
