use std::net::SocketAddr;
use std::process::ExitCode;

use bandit_lens::report::{load_inputs, report_to_file, simulate_to_dir};
use bandit_lens::ExperimentConfig;
use bandit_lens_cli::service::{router, AppState};
use bandit_lens_cli::{Cli, Command, Preset};
use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Init { preset, out } => {
            let config = match preset {
                Preset::Desk => ExperimentConfig::desk_default(),
                Preset::DeskThompson => ExperimentConfig::desk_thompson(),
            };
            let text = if out.extension().is_some_and(|e| e == "json") {
                serde_json::to_string_pretty(&config).expect("config serializes") + "\n"
            } else {
                config.to_toml()
            };
            std::fs::write(&out, text)
                .map_err(|e| format!("cannot write {}: {e}", out.display()))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Simulate {
            config,
            rounds,
            seed,
            out,
        } => {
            let config = ExperimentConfig::load(&config).map_err(|e| e.to_string())?;
            let summary =
                simulate_to_dir(&config, rounds, seed, &out).map_err(|e| e.to_string())?;
            println!(
                "simulated {} rounds of {} (seed {}): mean reward {:.4} ± {:.4}; wrote {} and {}",
                summary.rounds,
                summary.experiment_id,
                summary.seed,
                summary.mean_reward,
                summary.reward_se,
                summary.log_path.display(),
                summary.snapshot_path.display()
            );
            Ok(())
        }
        Command::Report { inputs, out } => {
            let (payload, ingest) = report_to_file(
                &inputs.config,
                &inputs.logs,
                &inputs.snapshot,
                inputs.seed,
                &out,
            )
            .map_err(|e| e.to_string())?;
            println!(
                "report for {}: {} records ({} rejected lines); wrote {}",
                payload.experiment_id,
                payload.n_records,
                ingest.rejected.len(),
                out.display()
            );
            Ok(())
        }
        Command::Serve {
            inputs,
            port,
            host,
            cors_origin,
            out,
        } => {
            let loaded = load_inputs(&inputs.config, &inputs.logs, &inputs.snapshot, inputs.seed)
                .map_err(|e| e.to_string())?;
            if let Some(path) = &out {
                let payload = loaded.dashboard().map_err(|e| e.to_string())?;
                std::fs::write(path, payload.to_json())
                    .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            }
            let state = AppState::from_inputs(loaded).map_err(|e| e.to_string())?;
            let origin = cors_origin
                .map(|o| o.parse().map_err(|_| format!("invalid CORS origin `{o}`")))
                .transpose()?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| format!("invalid bind address {host}:{port}: {e}"))?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr)
                    .await
                    .map_err(|e| format!("cannot bind {addr}: {e}"))?;
                tracing::info!(%addr, "serving");
                axum::serve(listener, router(state, origin))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
                    .map_err(|e| e.to_string())
            })
        }
    }
}
