//! File-in, file-out pipelines behind the command-line entry points.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::dashboard::{assemble_dashboard, DashboardError, DashboardPayload};
use crate::engine::PolicySnapshot;
use crate::simulator::{run_online, Environment, SimError};
use crate::store::{ingest_logs, IngestError, IngestReport, LogView};

pub const LOG_FILE: &str = "logs.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Dashboard(#[from] DashboardError),
    #[error("cannot read snapshot {path}: {reason}")]
    Snapshot { path: PathBuf, reason: String },
    #[error("snapshot {path} was built for a different arm catalog")]
    SnapshotMismatch { path: PathBuf },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Printed by `simulate` and written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub experiment_id: String,
    pub rounds: usize,
    pub seed: u64,
    pub mean_reward: f64,
    pub reward_se: f64,
    pub log_path: PathBuf,
    pub snapshot_path: PathBuf,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ReportError> {
    let err = |source| ReportError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(err)?;
    }
    // Write to a sibling and rename so readers never see a partial file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(err)?;
    std::fs::rename(&tmp, path).map_err(err)
}

/// Runs the configured logging policy online and writes `logs.jsonl` and
/// `snapshot.json` into `out_dir`.
pub fn simulate_to_dir(
    config: &ExperimentConfig,
    rounds: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<SimulateSummary, ReportError> {
    let env = Environment::from_config(config)?;
    let run = run_online(&env, config, rounds, seed)?;
    let log_path = out_dir.join(LOG_FILE);
    let snapshot_path = out_dir.join(SNAPSHOT_FILE);
    write_file(&log_path, run.store.snapshot().to_jsonl().as_bytes())?;
    write_file(&snapshot_path, snapshot_json(&run.snapshot).as_bytes())?;
    Ok(SimulateSummary {
        experiment_id: config.experiment_id.clone(),
        rounds,
        seed,
        mean_reward: run.mean_reward,
        reward_se: run.reward_se,
        log_path,
        snapshot_path,
    })
}

pub fn snapshot_json(snapshot: &PolicySnapshot) -> String {
    let mut s = serde_json::to_string_pretty(snapshot).expect("snapshot is serializable");
    s.push('\n');
    s
}

pub fn load_snapshot(
    path: &Path,
    config: &ExperimentConfig,
) -> Result<PolicySnapshot, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReportError::Snapshot {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let snapshot: PolicySnapshot =
        serde_json::from_str(&text).map_err(|e| ReportError::Snapshot {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    if snapshot.arms() != config.arms.as_slice() || snapshot.model().dim() != config.schema.dim() {
        return Err(ReportError::SnapshotMismatch {
            path: path.to_path_buf(),
        });
    }
    Ok(snapshot)
}

/// Everything a report or the service needs, loaded and validated.
#[derive(Debug, Clone)]
pub struct ReportInputs {
    pub config: ExperimentConfig,
    pub view: LogView,
    pub snapshot: PolicySnapshot,
    pub ingest: IngestReport,
}

/// Loads config, log and snapshot. `mc_seed` overrides the snapshot's Monte
/// Carlo seed when given.
pub fn load_inputs(
    config_path: &Path,
    log_path: &Path,
    snapshot_path: &Path,
    mc_seed: Option<u64>,
) -> Result<ReportInputs, ReportError> {
    let config = ExperimentConfig::load(config_path)?;
    let mut snapshot = load_snapshot(snapshot_path, &config)?;
    if let Some(seed) = mc_seed {
        snapshot = snapshot.with_mc_seed(seed);
    }
    let (store, ingest) = ingest_logs(log_path, &config)?;
    Ok(ReportInputs {
        config,
        view: store.snapshot(),
        snapshot,
        ingest,
    })
}

impl ReportInputs {
    pub fn dashboard(&self) -> Result<DashboardPayload, DashboardError> {
        assemble_dashboard(&self.view, &self.snapshot, &self.config)
    }
}

/// Builds the dashboard from files and writes it to `out`.
pub fn report_to_file(
    config_path: &Path,
    log_path: &Path,
    snapshot_path: &Path,
    mc_seed: Option<u64>,
    out: &Path,
) -> Result<(DashboardPayload, IngestReport), ReportError> {
    let inputs = load_inputs(config_path, log_path, snapshot_path, mc_seed)?;
    let payload = inputs.dashboard()?;
    write_file(out, payload.to_json().as_bytes())?;
    Ok((payload, inputs.ingest))
}
