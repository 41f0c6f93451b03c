#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use torswarm::{Error, PRESETS};

#[derive(Parser)]
#[command(name = "torswarm", version, about = "BitTorrent-over-onion-routing swarm simulator with a malicious exit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its outputs.
    Run {
        /// Scenario TOML file; layered over --preset when both are given.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replaces the seed from the preset or file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `output.dir` or `./out`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
    },
    /// List the built-in presets.
    Presets,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TORSWARM_LOG", "info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Run { config, seed, out, preset } => {
            if config.is_none() && preset.is_none() {
                eprintln!("error: give --config, --preset or both");
                return ExitCode::from(2);
            }
            let result = torswarm::load(config.as_deref(), preset.as_deref(), seed).and_then(|cfg| {
                let dir = out.or_else(|| cfg.output.dir.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
                log::info!("running seed {} for {} s into {}", cfg.seed, cfg.duration, dir.display());
                torswarm::run(&cfg, &dir)
            });
            match result {
                Ok(r) => {
                    log::info!("{}", r.summary);
                    for f in &r.files {
                        log::debug!("wrote {}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(match e {
                        Error::ConfigInvalid { .. } => 2,
                        Error::Io { .. } => 3,
                        Error::Sim(_) => 4,
                    })
                }
            }
        }
    }
}
