//! Linear reward models and the policies built on top of them.

mod model;
mod policy;

pub use model::LinearRewardModel;
pub use policy::{
    apply_floor, argmax, sample_index, PolicyRule, PolicySnapshot, DEFAULT_MC_SAMPLES,
    DEFAULT_P_MIN, MIN_MC_SAMPLES,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid policy configuration: {0}")]
    Config(String),
    #[error("unknown arm `{0}`")]
    UnknownArm(String),
    #[error("context has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite context or reward")]
    NonFinite,
    #[error("design matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("ablation leaves no arms")]
    NoSurvivingArms,
    #[error("no surviving support: every remaining arm has probability zero")]
    NoSurvivingSupport,
}
