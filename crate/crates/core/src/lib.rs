//! Off-policy "value gain" analysis for contextual bandits.
//!
//! The crate is organised along the data flow of an operator console:
//!
//! - [`context`], [`config`], [`store`]: domain types, experiment
//!   configuration and the append-only log store.
//! - [`engine`]: per-arm ridge reward models and the policies built on them,
//!   each exposing its full per-context action-probability vector.
//! - [`simulator`]: a synthetic environment with known mean rewards that
//!   produces logs and ground-truth policy values.
//! - [`ope`]: IPS, SNIPS, direct-method and doubly-robust estimators.
//! - [`value_gain`]: ablated counterfactual policies and `g(τ) = v^π − v^π̄`.
//! - [`dashboard`]: the payload behind the top-level, variant and
//!   per-context sections.
//! - [`report`]: file pipelines used by the command-line tool.

pub mod config;
pub mod context;
pub mod dashboard;
pub mod engine;
pub mod ope;
pub mod report;
pub mod simulator;
pub mod stats;
pub mod store;
pub mod value_gain;

pub use config::{ConfigError, EstimatorSettings, ExperimentConfig, GoalMetric, PolicyConfig};
pub use context::{
    context_key, raw_context, Arm, ContextField, ContextSchema, ContextValue, ContextVector,
    EncodeError, FieldKind, RawContext, SchemaError,
};
pub use dashboard::{assemble_dashboard, DashboardError, DashboardPayload, SCHEMA_VERSION};
pub use engine::{EngineError, LinearRewardModel, PolicyRule, PolicySnapshot};
pub use ope::{EstimatorKind, OpeError, ValueEstimate};
pub use simulator::{
    run_frozen, run_online, true_policy_value, Environment, EnvironmentConfig, GroundTruthValue,
    NoiseKind, SimError, SimulationRun,
};
pub use store::{
    ingest_logs, ingest_reader, Catalog, IngestError, IngestReport, LogRecord, LogStore, LogView,
    RejectReason, WireRecord,
};
pub use value_gain::{
    build_ablated_policy, value_gain, Ablation, AblationSpec, ValueGainError, ValueGainReport,
};
