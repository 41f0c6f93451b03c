//! Output files: the report document, two record logs and per-figure CSVs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use torswarm_core::analytics::Cdf;
use torswarm_core::config::ScenarioConfig;
use torswarm_core::overlay::{Direction, ExitObservation, Payload};
use torswarm_core::sim::{DhtFpReport, SimOutput};

use crate::Error;

/// One line of `observations.ndjson`. Payload bytes are hex.
#[derive(Debug, Serialize)]
pub struct ObservationLine {
    pub time: u64,
    pub exit_relay: u32,
    pub circuit: u64,
    pub stream: u64,
    pub destination: String,
    pub direction: Direction,
    pub encrypted: bool,
    pub length: usize,
    pub payload_hex: Option<String>,
}

impl From<&ExitObservation> for ObservationLine {
    fn from(o: &ExitObservation) -> Self {
        ObservationLine {
            time: o.time,
            exit_relay: o.exit_relay.0,
            circuit: o.circuit_id.0,
            stream: o.stream_id.0,
            destination: o.destination.to_string(),
            direction: o.direction,
            encrypted: matches!(o.payload, Payload::Opaque(_)),
            length: o.payload.len(),
            payload_hex: o.payload.plaintext().map(hex::encode),
        }
    }
}

#[derive(Serialize)]
struct SimDocument<'a> {
    config: &'a ScenarioConfig,
    stats: &'a torswarm_core::sim::RunStats,
    evaluation: &'a torswarm_core::adversary::Evaluation,
    report: &'a torswarm_core::analytics::Report,
    domino_sweep: &'a [torswarm_core::sim::SweepPoint],
}

#[derive(Serialize)]
struct StudyDocument<'a> {
    config: &'a ScenarioConfig,
    dht_fp: &'a DhtFpReport,
}

struct Out<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Out<'_> {
    fn create(&mut self, name: &str) -> Result<(PathBuf, BufWriter<File>), Error> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| Error::Io { path: parent.to_path_buf(), source })?;
        }
        let f = File::create(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
        self.written.push(path.clone());
        Ok((path, BufWriter::new(f)))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Error> {
        let (path, mut w) = self.create(name)?;
        let io = |source| Error::Io { path: path.clone(), source };
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(io)
    }

    fn ndjson<T: Serialize>(&mut self, name: &str, items: impl IntoIterator<Item = T>) -> Result<(), Error> {
        let (path, mut w) = self.create(name)?;
        let io = |source| Error::Io { path: path.clone(), source };
        for item in items {
            serde_json::to_writer(&mut w, &item).map_err(|e| io(e.into()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    fn csv<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<(), Error> {
        let (path, w) = self.create(name)?;
        let io = |e: csv::Error| Error::Io { path: path.clone(), source: e.into() };
        let mut c = csv::Writer::from_writer(w);
        for r in rows {
            c.serialize(r).map_err(io)?;
        }
        c.flush().map_err(|source| Error::Io { path: path.clone(), source })
    }

    fn cdf(&mut self, name: &str, cdf: &Cdf) -> Result<(), Error> {
        self.csv(name, cdf.points.iter())
    }
}

/// Writes every output of a simulation run into `dir`. Returns the paths
/// written.
pub fn write_simulation(dir: &Path, cfg: &ScenarioConfig, out: &SimOutput) -> Result<Vec<PathBuf>, Error> {
    let mut o = Out { dir, written: Vec::new() };
    o.json(
        "report.json",
        &SimDocument {
            config: cfg,
            stats: &out.stats,
            evaluation: &out.evaluation,
            report: &out.report,
            domino_sweep: &out.sweep,
        },
    )?;
    if cfg.output.observations {
        o.ndjson("observations.ndjson", out.observations.iter().map(ObservationLine::from))?;
    }
    o.ndjson("deanon.ndjson", out.records.iter().chain(&out.linked_records))?;

    let r = &out.report;
    let (lo, _, _) = torswarm_core::analytics::PORT_TEST_RANGE;
    let width = 1008u32;
    #[derive(Serialize)]
    struct PortBin {
        from: u32,
        to: u32,
        count: u64,
    }
    o.csv(
        "figures/ports.csv",
        r.port_histogram.bins.iter().enumerate().map(|(i, &count)| {
            let from = u32::from(lo) + i as u32 * width;
            PortBin { from, to: from + width - 1, count }
        }),
    )?;
    o.cdf("figures/torrent_size_cdf.csv", &r.torrent_size_cdf)?;
    o.cdf("figures/circuits_per_ip_cdf.csv", &r.circuits_per_ip_cdf)?;
    o.cdf("figures/streams_per_ip_cdf.csv", &r.streams_per_ip_cdf)?;

    #[derive(Serialize)]
    struct UsageRow {
        day: u64,
        tracker_only: usize,
        content: usize,
        tracker_only_fraction: String,
    }
    o.csv(
        "figures/usage_daily.csv",
        r.usage_mode.per_day.iter().map(|(day, s)| UsageRow {
            day: *day,
            tracker_only: s.tracker_only,
            content: s.content,
            tracker_only_fraction: s.tracker_only_fraction.to_string(),
        }),
    )?;

    #[derive(Serialize)]
    struct HourRow {
        hour: u64,
        unique_ips: u64,
    }
    o.csv(
        "figures/unique_ips_over_time.csv",
        r.unique_ips_over_time.iter().map(|&(hour, unique_ips)| HourRow { hour, unique_ips }),
    )?;

    #[derive(Serialize)]
    struct OccurrenceRow {
        occurrences: u64,
        ips: u64,
    }
    o.csv(
        "figures/ip_occurrences.csv",
        r.ip_occurrence_histogram.iter().map(|(&occurrences, &ips)| OccurrenceRow { occurrences, ips }),
    )?;

    #[derive(Serialize)]
    struct GroupCsv<'a> {
        group: &'a str,
        ips: u64,
        fraction: f64,
        baseline: Option<f64>,
        over: String,
    }
    o.csv(
        "figures/groups.csv",
        r.group_distribution.iter().map(|g| GroupCsv {
            group: &g.label,
            ips: g.ips,
            fraction: g.fraction,
            baseline: g.baseline,
            over: g.over.value().map_or_else(|| String::from("-"), |v| format!("{v:.3}")),
        }),
    )?;

    #[derive(Serialize)]
    struct CategoryRow<'a> {
        group: &'a str,
        category: &'a str,
        streams: u64,
    }
    o.csv(
        "figures/http_categories.csv",
        r.http_category_histogram
            .iter()
            .flat_map(|(g, cats)| cats.iter().map(move |(c, &streams)| CategoryRow { group: g, category: c, streams })),
    )?;
    o.cdf("figures/http_bt_cooccurrence_cdf.csv", &r.http_bt_cooccurrence_cdf)?;

    if !out.sweep.is_empty() {
        #[derive(Serialize)]
        struct SweepRow {
            window: u64,
            attributed_streams: usize,
            intra: usize,
            inter: usize,
            intra_share: String,
            precision: String,
            recall: String,
            conflicts: usize,
        }
        o.csv(
            "figures/domino_sweep.csv",
            out.sweep.iter().map(|p| SweepRow {
                window: p.window,
                attributed_streams: p.attributed_streams,
                intra: p.intra,
                inter: p.inter,
                intra_share: p.intra_share.to_string(),
                precision: p.precision.to_string(),
                recall: p.recall.to_string(),
                conflicts: p.conflicts,
            }),
        )?;
    }
    Ok(o.written)
}

pub fn write_dht_fp(dir: &Path, cfg: &ScenarioConfig, report: &DhtFpReport) -> Result<Vec<PathBuf>, Error> {
    let mut o = Out { dir, written: Vec::new() };
    o.json("report.json", &StudyDocument { config: cfg, dht_fp: report })?;
    #[derive(Serialize)]
    struct Row {
        size: usize,
        torrents: usize,
        victims: usize,
        matched: usize,
        false_positives: usize,
        oracle_false_positives: usize,
        precision: String,
    }
    o.csv(
        "figures/dht_fp.csv",
        report.rows.iter().map(|r| Row {
            size: r.size,
            torrents: r.torrents,
            victims: r.victims,
            matched: r.matched,
            false_positives: r.false_positives,
            oracle_false_positives: r.oracle_false_positives,
            precision: r.precision.to_string(),
        }),
    )?;
    Ok(o.written)
}
