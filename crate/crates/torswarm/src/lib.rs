//! Runner for the torswarm simulator: scenario files, presets, output
//! writers and the `torswarm` command line.

use std::path::{Path, PathBuf};

use torswarm_core::config::{RunKind, ScenarioConfig};
use torswarm_core::sim::{self, SimError};

pub mod load;
pub mod output;

pub use load::{load, PRESETS};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config at {path}: {reason}")]
    ConfigInvalid { path: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Sim(SimError),
}

impl From<SimError> for Error {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => Error::ConfigInvalid { path: c.path, reason: c.reason },
            other => Error::Sim(other),
        }
    }
}

/// What a run wrote and a one-line summary for the log.
#[derive(Debug)]
pub struct RunResult {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Runs the scenario and writes its outputs into `out`.
pub fn run(cfg: &ScenarioConfig, out: &Path) -> Result<RunResult, Error> {
    match cfg.run {
        RunKind::DhtFpStudy => {
            let report = sim::dht_fp_study(cfg)?;
            let files = output::write_dht_fp(out, cfg, &report)?;
            let summary = report
                .rows
                .iter()
                .map(|r| format!("n={} precision={} fp={} oracle_fp={}", r.size, r.precision, r.false_positives, r.oracle_false_positives))
                .collect::<Vec<_>>()
                .join("; ");
            Ok(RunResult { files, summary })
        }
        RunKind::Simulation | RunKind::DominoStudy => {
            let result = sim::simulate(cfg)?;
            let files = output::write_simulation(out, cfg, &result)?;
            let e = &result.evaluation;
            let summary = format!(
                "observed_streams={} attributed={} precision={} recall={} clients={}",
                e.observed_streams, e.attributed_streams, e.precision, e.recall, e.deanonymized_clients
            );
            Ok(RunResult { files, summary })
        }
    }
}
