//! Experiment configuration.
//!
//! One document describes an experiment end to end: arm catalog, context
//! schema, goal metric, policy, estimator settings and (optionally) the
//! simulated environment. Files ending in `.json` are parsed as JSON, anything
//! else as TOML. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{validate_arms, Arm, ContextField, ContextSchema, FieldKind};
use crate::engine::{
    LinearRewardModel, PolicyRule, PolicySnapshot, DEFAULT_MC_SAMPLES, DEFAULT_P_MIN,
};
use crate::ope::EstimatorKind;
use crate::simulator::{EnvironmentConfig, NoiseKind, SegmentRewards};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalMetric {
    pub name: String,
    pub units: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub ridge_lambda: f64,
    /// Probability floor applied while logging.
    pub p_min: f64,
    /// Seed for Monte Carlo propensity estimation (Thompson only).
    pub mc_seed: u64,
    pub rule: PolicyRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSettings {
    /// Estimator for counterfactual values.
    pub kind: EstimatorKind,
    /// Importance-weight cap; omit to disable clipping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Ips,
            clip: Some(100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    /// Refuse ablations that remove the baseline arm.
    pub require_surviving_baseline: bool,
    pub goal_metric: GoalMetric,
    pub arms: Vec<Arm>,
    pub schema: ContextSchema,
    pub policy: PolicyConfig,
    pub estimator: EstimatorSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<EnvironmentConfig>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let config = if is_json {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is TOML-representable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if self.experiment_id.trim().is_empty() {
            return Err(ConfigError::Invalid("experiment_id is empty".into()));
        }
        validate_arms(&self.arms).map_err(|e| invalid(&e))?;
        self.schema.validate().map_err(|e| invalid(&e))?;
        // Building the prior snapshot checks rule, floor and lambda together.
        self.prior_snapshot().map_err(|e| invalid(&e))?;
        if let Some(clip) = self.estimator.clip {
            if !(clip.is_finite() && clip > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "estimator clip must be positive, got {clip}"
                )));
            }
        }
        if let Some(env) = &self.environment {
            env.validate(&self.arms, &self.schema)
                .map_err(|e| invalid(&e))?;
        }
        Ok(())
    }

    pub fn arm_ids(&self) -> Vec<String> {
        self.arms.iter().map(|a| a.arm_id.clone()).collect()
    }

    pub fn baseline(&self) -> &Arm {
        self.arms
            .iter()
            .find(|a| a.is_baseline)
            .expect("validated catalog has a baseline")
    }

    /// Untrained model with the configured ridge prior.
    pub fn prior_model(&self) -> Result<LinearRewardModel, crate::engine::EngineError> {
        LinearRewardModel::new(self.arm_ids(), self.schema.dim(), self.policy.ridge_lambda)
    }

    /// Logging policy over an untrained model.
    pub fn prior_snapshot(&self) -> Result<PolicySnapshot, crate::engine::EngineError> {
        PolicySnapshot::new(
            self.policy.rule.clone(),
            self.prior_model()?,
            self.arms.clone(),
            self.policy.p_min,
            self.policy.mc_seed,
        )
    }

    /// Desk-scale pricing experiment: two categorical fields, four price
    /// points, epsilon-greedy logging.
    ///
    /// Mean rewards are chosen so that the best arm differs by country and
    /// the baseline is never best.
    pub fn desk_default() -> Self {
        let arms = vec![
            Arm::new("p099", "$0.99", true),
            Arm::new("p299", "$2.99", false),
            Arm::new("p599", "$5.99", false),
            Arm::new("p999", "$9.99", false),
        ];
        let schema = ContextSchema {
            fields: vec![
                ContextField::categorical("country", &["A", "B"]),
                ContextField::categorical("platform", &["ios", "android"]),
            ],
        };
        let table: [(&str, &str, [f64; 4]); 4] = [
            ("A", "ios", [1.0, 1.6, 1.2, 0.8]),
            ("A", "android", [1.0, 1.3, 0.9, 0.5]),
            ("B", "ios", [1.0, 1.1, 1.5, 2.0]),
            ("B", "android", [1.0, 0.8, 1.2, 1.7]),
        ];
        let segments = table
            .iter()
            .map(|(country, platform, means)| SegmentRewards {
                context: BTreeMap::from([
                    ("country".to_string(), country.to_string()),
                    ("platform".to_string(), platform.to_string()),
                ]),
                mean_reward: arms
                    .iter()
                    .zip(means)
                    .map(|(a, m)| (a.arm_id.clone(), *m))
                    .collect(),
            })
            .collect();
        let environment = EnvironmentConfig {
            noise: NoiseKind::Gaussian {
                sigma: 1.0,
                truncate_at_zero: true,
            },
            fields: Vec::new(),
            segments,
            numeric_effects: Vec::new(),
        };
        ExperimentConfig {
            experiment_id: "desk-pricing".into(),
            require_surviving_baseline: false,
            goal_metric: GoalMetric {
                name: "dollars spent".into(),
                units: "USD per player".into(),
            },
            arms,
            schema,
            policy: PolicyConfig {
                ridge_lambda: 1.0,
                p_min: DEFAULT_P_MIN,
                mc_seed: 0,
                rule: PolicyRule::EpsilonGreedy { epsilon: 0.1 },
            },
            estimator: EstimatorSettings::default(),
            environment: Some(environment),
        }
    }

    /// Same experiment logged by Thompson sampling with the default
    /// Monte Carlo budget.
    pub fn desk_thompson() -> Self {
        let mut config = Self::desk_default();
        config.policy.rule = PolicyRule::Thompson {
            mc_samples: DEFAULT_MC_SAMPLES,
            noise_variance: 1.0,
        };
        config
    }

    /// Names of categorical fields in schema order.
    pub fn categorical_fields(&self) -> Vec<&ContextField> {
        self.schema
            .fields
            .iter()
            .filter(|f| matches!(f.kind, FieldKind::Categorical { .. }))
            .collect()
    }
}
