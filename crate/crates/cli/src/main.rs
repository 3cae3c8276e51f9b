use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hitl_cli::commands::{self, RunOverrides};
use hitl_cli::config::{load_experiment_config, load_synthetic_config};
use hitl_cli::service::{router, AppState};
use hitl_core::datasets::SyntheticConfig;
use hitl_core::detectors::DetectorKind;

#[derive(Parser)]
#[command(name = "hitl", version, about = "Human-in-the-loop feedback for black-box anomaly detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run base-only and HITL experiments and write a results document.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results.json")]
        out: PathBuf,
        /// Run only this detector (configured parameters if present, defaults otherwise).
        #[arg(long, value_parser = parse_kind)]
        detector: Option<DetectorKind>,
    },
    /// Generate the synthetic spike dataset as a multi-series CSV.
    Generate {
        /// Synthetic dataset config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve review sessions over HTTP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "HITL_PORT", default_value_t = 8080)]
        port: u16,
        /// Write a JSON snapshot of each session here after every advance.
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> Result<DetectorKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown detector {s:?} (iid, holt_winters, rcf, rnn, file)"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            detector,
        } => load_experiment_config(&config).and_then(|c| {
            let c = commands::apply_overrides(c, &RunOverrides { seed, detector });
            commands::run(&c, &out).map(|_| ())
        }),
        Command::Generate { config, out } => config
            .map_or_else(|| Ok(SyntheticConfig::default()), |p| load_synthetic_config(&p))
            .and_then(|c| commands::generate(&c, &out))
            .map(|n| eprintln!("wrote {n} series to {}", out.display())),
        Command::Serve {
            config,
            port,
            snapshot_dir,
        } => load_experiment_config(&config).and_then(|c| serve(c, port, snapshot_dir)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn serve(
    config: hitl_core::experiment::ExperimentConfig,
    port: u16,
    snapshot_dir: Option<PathBuf>,
) -> hitl_cli::Result<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|source| hitl_cli::CliError::Io {
        path: PathBuf::from("<runtime>"),
        source,
    })?;
    rt.block_on(async move {
        let app = router(AppState::new(config, snapshot_dir));
        let addr = SocketAddr::from(([0, 0, 0, 0], port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| hitl_cli::CliError::Io {
                path: PathBuf::from(addr.to_string()),
                source,
            })?;
        eprintln!("listening on {addr}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|source| hitl_cli::CliError::Io {
                path: PathBuf::from(addr.to_string()),
                source,
            })
    })
}
