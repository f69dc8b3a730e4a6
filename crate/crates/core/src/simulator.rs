//! Synthetic environment with known mean rewards.
//!
//! Contexts are drawn field by field (categorical levels with configured
//! probabilities, numeric fields uniformly). The reward location of a
//! `(segment, arm)` pair is the configured table entry `μ*` plus optional
//! linear effects of scaled numeric fields; the noise model then maps the
//! location to a reward draw whose exact mean is known in closed form.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::context::{Arm, ContextSchema, ContextValue, FieldKind, RawContext};
use crate::engine::{sample_index, EngineError, PolicySnapshot};
use crate::stats::{mean_and_se, normal_cdf, normal_pdf};
use crate::store::{Catalog, LogRecord, LogStore, RejectReason};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid environment: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("simulated record rejected: {0}")]
    Store(#[from] RejectReason),
}

// ── Configuration ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    /// Deterministic rewards.
    None,
    Gaussian {
        sigma: f64,
        truncate_at_zero: bool,
    },
    /// `μ·exp(σZ − σ²/2)`, mean-preserving.
    LogNormal {
        sigma: f64,
    },
    /// `scale` with probability `μ/scale`, else 0.
    BernoulliScaled {
        scale: f64,
    },
}

impl NoiseKind {
    /// Exact mean reward at location `mu`.
    pub fn mean(&self, mu: f64) -> f64 {
        match *self {
            NoiseKind::Gaussian {
                sigma,
                truncate_at_zero: true,
            } if sigma > 0.0 => mu * normal_cdf(mu / sigma) + sigma * normal_pdf(mu / sigma),
            NoiseKind::Gaussian {
                truncate_at_zero: true,
                ..
            } => mu.max(0.0),
            NoiseKind::BernoulliScaled { scale } => (mu / scale).clamp(0.0, 1.0) * scale,
            _ => mu,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, mu: f64, rng: &mut R) -> f64 {
        match *self {
            NoiseKind::None => mu,
            NoiseKind::Gaussian {
                sigma,
                truncate_at_zero,
            } => {
                let z: f64 = rng.sample(StandardNormal);
                let r = mu + sigma * z;
                if truncate_at_zero {
                    r.max(0.0)
                } else {
                    r
                }
            }
            NoiseKind::LogNormal { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                mu * (sigma * z - 0.5 * sigma * sigma).exp()
            }
            NoiseKind::BernoulliScaled { scale } => {
                if rng.random::<f64>() < (mu / scale).clamp(0.0, 1.0) {
                    scale
                } else {
                    0.0
                }
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            NoiseKind::Gaussian { sigma, .. } | NoiseKind::LogNormal { sigma }
                if !(sigma.is_finite() && sigma >= 0.0) =>
            {
                Err(format!("noise sigma must be >= 0, got {sigma}"))
            }
            NoiseKind::BernoulliScaled { scale } if !(scale.is_finite() && scale > 0.0) => {
                Err(format!("bernoulli scale must be positive, got {scale}"))
            }
            _ => Ok(()),
        }
    }
}

/// Sampling distribution for one schema field. Fields without an entry are
/// drawn uniformly (over levels, or over the numeric bounds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldDistribution {
    Categorical {
        field: String,
        probabilities: BTreeMap<String, f64>,
    },
    Uniform {
        field: String,
        low: f64,
        high: f64,
    },
}

impl FieldDistribution {
    fn field(&self) -> &str {
        match self {
            FieldDistribution::Categorical { field, .. }
            | FieldDistribution::Uniform { field, .. } => field,
        }
    }
}

/// Mean reward location of every arm in one categorical segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRewards {
    /// Level of every categorical field.
    pub context: BTreeMap<String, String>,
    pub mean_reward: BTreeMap<String, f64>,
}

/// Per-arm slope on a min-max scaled numeric field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericEffect {
    pub field: String,
    pub slopes: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub noise: NoiseKind,
    #[serde(default)]
    pub fields: Vec<FieldDistribution>,
    pub segments: Vec<SegmentRewards>,
    #[serde(default)]
    pub numeric_effects: Vec<NumericEffect>,
}

impl EnvironmentConfig {
    pub fn validate(&self, arms: &[Arm], schema: &ContextSchema) -> Result<(), SimError> {
        Environment::build(self, arms, schema).map(|_| ())
    }
}

// ── Environment ─────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
enum Sampler {
    Categorical {
        levels: Vec<String>,
        probs: Vec<f64>,
    },
    Uniform {
        low: f64,
        high: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Environment {
    catalog: Catalog,
    samplers: Vec<Sampler>,
    /// Categorical level indices (schema order) → location per arm.
    table: HashMap<Vec<usize>, Vec<f64>>,
    /// `(schema field index, min, max, slope per arm)`.
    effects: Vec<(usize, f64, f64, Vec<f64>)>,
    noise: NoiseKind,
}

/// One drawn context with its segment.
#[derive(Debug, Clone)]
pub struct SampledContext {
    pub raw: RawContext,
    segment: Vec<usize>,
}

impl Environment {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self, SimError> {
        let env = config
            .environment
            .as_ref()
            .ok_or_else(|| SimError::Config("config has no [environment] section".into()))?;
        Self::build(env, &config.arms, &config.schema)
    }

    pub fn build(
        env: &EnvironmentConfig,
        arms: &[Arm],
        schema: &ContextSchema,
    ) -> Result<Self, SimError> {
        let bad = |m: String| SimError::Config(m);
        env.noise.validate().map_err(bad)?;
        for dist in &env.fields {
            if schema.field(dist.field()).is_none() {
                return Err(bad(format!(
                    "distribution for unknown field `{}`",
                    dist.field()
                )));
            }
        }
        let mut samplers = Vec::new();
        for field in &schema.fields {
            let dist = env.fields.iter().find(|d| d.field() == field.name);
            let sampler = match (&field.kind, dist) {
                (FieldKind::Categorical { levels }, None) => Sampler::Categorical {
                    levels: levels.clone(),
                    probs: vec![1.0 / levels.len() as f64; levels.len()],
                },
                (
                    FieldKind::Categorical { levels },
                    Some(FieldDistribution::Categorical { probabilities, .. }),
                ) => {
                    if let Some(unknown) = probabilities.keys().find(|k| !levels.contains(k)) {
                        return Err(bad(format!(
                            "field `{}` has no level `{unknown}`",
                            field.name
                        )));
                    }
                    let probs: Vec<f64> = levels
                        .iter()
                        .map(|l| probabilities.get(l).copied().unwrap_or(0.0))
                        .collect();
                    let total: f64 = probs.iter().sum();
                    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0))
                        || (total - 1.0).abs() > 1e-9
                    {
                        return Err(bad(format!(
                            "level probabilities of `{}` must be non-negative and sum to 1",
                            field.name
                        )));
                    }
                    Sampler::Categorical {
                        levels: levels.clone(),
                        probs,
                    }
                }
                (FieldKind::Numeric { min, max }, None) => Sampler::Uniform {
                    low: *min,
                    high: *max,
                },
                (
                    FieldKind::Numeric { min, max },
                    Some(FieldDistribution::Uniform { low, high, .. }),
                ) => {
                    if !(min <= low && low <= high && high <= max) {
                        return Err(bad(format!(
                            "uniform range of `{}` must lie within [{min}, {max}]",
                            field.name
                        )));
                    }
                    Sampler::Uniform {
                        low: *low,
                        high: *high,
                    }
                }
                _ => {
                    return Err(bad(format!(
                        "distribution kind does not match field `{}`",
                        field.name
                    )))
                }
            };
            samplers.push(sampler);
        }

        let categorical: Vec<(usize, &Vec<String>)> = schema
            .fields
            .iter()
            .enumerate()
            .filter_map(|(i, f)| match &f.kind {
                FieldKind::Categorical { levels } => Some((i, levels)),
                FieldKind::Numeric { .. } => None,
            })
            .collect();
        let mut table = HashMap::new();
        for seg in &env.segments {
            let mut key = Vec::with_capacity(categorical.len());
            for (i, levels) in &categorical {
                let name = &schema.fields[*i].name;
                let level = seg
                    .context
                    .get(name)
                    .ok_or_else(|| bad(format!("segment is missing field `{name}`")))?;
                key.push(levels.iter().position(|l| l == level).ok_or_else(|| {
                    bad(format!("segment has unknown level `{level}` of `{name}`"))
                })?);
            }
            if seg.context.len() != categorical.len() {
                return Err(bad(
                    "segment names a non-categorical or unknown field".into()
                ));
            }
            let mut means = Vec::with_capacity(arms.len());
            for arm in arms {
                let m = *seg.mean_reward.get(&arm.arm_id).ok_or_else(|| {
                    bad(format!(
                        "segment {:?} has no mean for arm `{}`",
                        seg.context, arm.arm_id
                    ))
                })?;
                if !m.is_finite() {
                    return Err(bad(format!("non-finite mean for arm `{}`", arm.arm_id)));
                }
                means.push(m);
            }
            if seg.mean_reward.len() != arms.len() {
                return Err(bad(format!(
                    "segment {:?} names an unknown arm",
                    seg.context
                )));
            }
            if table.insert(key, means).is_some() {
                return Err(bad(format!("segment {:?} listed twice", seg.context)));
            }
        }
        let expected: usize = categorical.iter().map(|(_, l)| l.len()).product();
        if table.len() != expected {
            return Err(bad(format!(
                "mean rewards cover {} of {expected} segments",
                table.len()
            )));
        }

        let mut effects = Vec::new();
        for effect in &env.numeric_effects {
            let idx = schema
                .fields
                .iter()
                .position(|f| f.name == effect.field)
                .ok_or_else(|| bad(format!("effect on unknown field `{}`", effect.field)))?;
            let FieldKind::Numeric { min, max } = schema.fields[idx].kind else {
                return Err(bad(format!(
                    "effect on non-numeric field `{}`",
                    effect.field
                )));
            };
            let slopes = arms
                .iter()
                .map(|a| effect.slopes.get(&a.arm_id).copied().unwrap_or(0.0))
                .collect();
            effects.push((idx, min, max, slopes));
        }

        Ok(Self {
            catalog: Catalog {
                arms: arms.to_vec(),
                schema: schema.clone(),
            },
            samplers,
            table,
            effects,
            noise: env.noise.clone(),
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn noise(&self) -> &NoiseKind {
        &self.noise
    }

    /// True when every field is categorical, so contexts can be enumerated.
    pub fn is_enumerable(&self) -> bool {
        self.samplers
            .iter()
            .all(|s| matches!(s, Sampler::Categorical { .. }))
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> SampledContext {
        let mut raw = RawContext::new();
        let mut segment = Vec::new();
        for (field, sampler) in self.catalog.schema.fields.iter().zip(&self.samplers) {
            match sampler {
                Sampler::Categorical { levels, probs } => {
                    let idx = sample_index(probs, rng);
                    segment.push(idx);
                    raw.insert(field.name.clone(), ContextValue::Text(levels[idx].clone()));
                }
                Sampler::Uniform { low, high } => {
                    let v = low + (high - low) * rng.random::<f64>();
                    raw.insert(field.name.clone(), ContextValue::Number(v));
                }
            }
        }
        SampledContext { raw, segment }
    }

    /// Reward location (before noise) of `arm` in `ctx`.
    pub fn location(&self, ctx: &SampledContext, arm: usize) -> f64 {
        let mut mu = self.table[&ctx.segment][arm];
        for (idx, min, max, slopes) in &self.effects {
            let name = &self.catalog.schema.fields[*idx].name;
            let v = ctx.raw[name].as_number().expect("numeric field");
            mu += slopes[arm] * (v - min) / (max - min);
        }
        mu
    }

    /// Exact expected reward of `arm` in `ctx`.
    pub fn mean_reward(&self, ctx: &SampledContext, arm: usize) -> f64 {
        self.noise.mean(self.location(ctx, arm))
    }

    pub fn sample_reward<R: Rng + ?Sized>(
        &self,
        ctx: &SampledContext,
        arm: usize,
        rng: &mut R,
    ) -> f64 {
        self.noise.sample(self.location(ctx, arm), rng)
    }

    /// Every categorical segment with its probability. Only meaningful when
    /// [`is_enumerable`](Self::is_enumerable).
    pub fn segments(&self) -> Vec<(f64, SampledContext)> {
        let mut out = vec![(
            1.0,
            SampledContext {
                raw: RawContext::new(),
                segment: Vec::new(),
            },
        )];
        for (field, sampler) in self.catalog.schema.fields.iter().zip(&self.samplers) {
            let Sampler::Categorical { levels, probs } = sampler else {
                continue;
            };
            let mut next = Vec::with_capacity(out.len() * levels.len());
            for (p, ctx) in &out {
                for (i, (level, q)) in levels.iter().zip(probs).enumerate() {
                    if *q == 0.0 {
                        continue;
                    }
                    let mut c = ctx.clone();
                    c.raw
                        .insert(field.name.clone(), ContextValue::Text(level.clone()));
                    c.segment.push(i);
                    next.push((p * q, c));
                }
            }
            out = next;
        }
        out
    }
}

// ── Ground truth ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMethod {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthValue {
    pub policy: String,
    pub value: f64,
    /// Zero for exact enumeration.
    pub se: f64,
    pub method: TruthMethod,
}

/// `E_π[r]` under the environment's true means.
///
/// Enumerates segments when every field is categorical; otherwise averages
/// `Σ_a π(a|x)·E[r|x,a]` over `mc_contexts` drawn contexts.
pub fn true_policy_value(
    env: &Environment,
    policy: &PolicySnapshot,
    mc_contexts: usize,
    seed: u64,
) -> Result<GroundTruthValue, SimError> {
    let schema = &env.catalog.schema;
    let expected = |ctx: &SampledContext| -> Result<f64, SimError> {
        let x = schema
            .encode(&ctx.raw)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let probs = policy.action_probabilities(&x.encoded)?;
        Ok(probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(a, p)| p * env.mean_reward(ctx, a))
            .sum())
    };
    let name = policy.rule().name().to_string();
    if env.is_enumerable() {
        let mut value = 0.0;
        for (p, ctx) in env.segments() {
            value += p * expected(&ctx)?;
        }
        return Ok(GroundTruthValue {
            policy: name,
            value,
            se: 0.0,
            method: TruthMethod::Exact,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::with_capacity(mc_contexts);
    for _ in 0..mc_contexts.max(2) {
        terms.push(expected(&env.sample_context(&mut rng))?);
    }
    let (value, se) = mean_and_se(&terms);
    Ok(GroundTruthValue {
        policy: name,
        value,
        se,
        method: TruthMethod::MonteCarlo,
    })
}

// ── Runs ────────────────────────────────────────────────────────────────

fn epoch() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2026-01-01T00:00:00Z")
        .expect("valid literal")
        .with_timezone(&Utc)
}

/// Output of a simulated run.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub store: LogStore,
    /// Policy at the end of the run.
    pub snapshot: PolicySnapshot,
    /// Mean over rounds of `Σ_a π_t(a|x_t)·E[r|x_t,a]`: the expected reward
    /// of the decisions actually taken, with reward noise removed.
    pub expected_value: f64,
    /// Mean and standard error of the realized rewards.
    pub mean_reward: f64,
    pub reward_se: f64,
}

fn run(
    env: &Environment,
    mut policy: PolicySnapshot,
    rounds: usize,
    seed: u64,
    learn: bool,
) -> Result<SimulationRun, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = LogStore::new(env.catalog.clone());
    let start = epoch();
    let mut expected_sum = 0.0;
    let mut rewards = Vec::with_capacity(rounds);
    let mut memo: HashMap<Vec<u64>, Vec<f64>> = HashMap::new();
    for round in 0..rounds {
        let ctx = env.sample_context(&mut rng);
        let x = env
            .catalog
            .schema
            .encode(&ctx.raw)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let probs = if learn {
            let probs = policy.action_probabilities(&x.encoded)?;
            debug_assert_eq!(policy.action_probabilities(&x.encoded)?, probs);
            probs
        } else {
            // A frozen policy is a pure function of the context.
            let key: Vec<u64> = x.encoded.iter().map(|v| v.to_bits()).collect();
            match memo.get(&key) {
                Some(p) => p.clone(),
                None => {
                    let p = policy.action_probabilities(&x.encoded)?;
                    memo.insert(key, p.clone());
                    p
                }
            }
        };
        let arm = sample_index(&probs, &mut rng);
        let propensity = probs[arm];
        expected_sum += probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(a, p)| p * env.mean_reward(&ctx, a))
            .sum::<f64>();
        let reward = env.sample_reward(&ctx, arm, &mut rng);
        rewards.push(reward);
        if learn {
            policy.observe(arm, &x.encoded, reward)?;
        }
        store.append(LogRecord {
            record_id: format!("r{round:07}"),
            ts: start + Duration::seconds(round as i64),
            arm_id: env.catalog.arms[arm].arm_id.clone(),
            arm,
            propensity,
            reward,
            context: x,
            user_id: None,
        })?;
    }
    let (mean_reward, reward_se) = mean_and_se(&rewards);
    Ok(SimulationRun {
        store,
        snapshot: policy,
        expected_value: expected_sum / rounds.max(1) as f64,
        mean_reward,
        reward_se,
    })
}

/// Runs the configured logging policy online for `rounds` rounds, updating
/// the reward model after every decision. The log records the exact
/// propensity used at each round.
pub fn run_online(
    env: &Environment,
    config: &ExperimentConfig,
    rounds: usize,
    seed: u64,
) -> Result<SimulationRun, SimError> {
    if rounds == 0 {
        return Err(SimError::Config("rounds must be >= 1".into()));
    }
    let policy = config.prior_snapshot()?;
    run(env, policy, rounds, seed, true)
}

/// Serves traffic with a frozen policy (no learning).
pub fn run_frozen(
    env: &Environment,
    policy: &PolicySnapshot,
    rounds: usize,
    seed: u64,
) -> Result<SimulationRun, SimError> {
    if rounds == 0 {
        return Err(SimError::Config("rounds must be >= 1".into()));
    }
    run(env, policy.clone(), rounds, seed, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ContextField;
    use crate::engine::PolicyRule;
    use approx::assert_relative_eq;

    fn single_segment(means: &[f64], noise: NoiseKind) -> ExperimentConfig {
        let mut config = ExperimentConfig::desk_default();
        config.arms = (0..means.len())
            .map(|i| Arm::new(format!("a{i}"), format!("A{i}"), i == 0))
            .collect();
        config.schema = ContextSchema {
            fields: vec![ContextField::categorical("g", &["x"])],
        };
        config.environment = Some(EnvironmentConfig {
            noise,
            fields: vec![],
            segments: vec![SegmentRewards {
                context: BTreeMap::from([("g".into(), "x".into())]),
                mean_reward: config
                    .arms
                    .iter()
                    .zip(means)
                    .map(|(a, m)| (a.arm_id.clone(), *m))
                    .collect(),
            }],
            numeric_effects: vec![],
        });
        config
    }

    fn with_rule(config: &ExperimentConfig, rule: PolicyRule) -> PolicySnapshot {
        config
            .prior_snapshot()
            .unwrap()
            .with_rule(rule, 0.0)
            .unwrap()
    }

    #[test]
    fn truth_single_arm() {
        let config = single_segment(&[2.0], NoiseKind::None);
        let env = Environment::from_config(&config).unwrap();
        let v = true_policy_value(&env, &config.prior_snapshot().unwrap(), 0, 0).unwrap();
        assert_eq!(v.value, 2.0);
        assert_eq!(v.method, TruthMethod::Exact);
    }

    #[test]
    fn truth_uniform_two_arms() {
        let config = single_segment(&[0.0, 4.0], NoiseKind::None);
        let env = Environment::from_config(&config).unwrap();
        let v = true_policy_value(&env, &with_rule(&config, PolicyRule::Uniform), 0, 0).unwrap();
        assert_eq!(v.value, 2.0);
    }

    #[test]
    fn truth_two_segments_deterministic_policy() {
        // Segment x: arm a1 has μ*=1; segment y: arm a1 has μ*=3. Fixed a1 → 2.
        let mut config = single_segment(&[0.0, 0.0], NoiseKind::None);
        config.schema = ContextSchema {
            fields: vec![ContextField::categorical("g", &["x", "y"])],
        };
        let env_cfg = config.environment.as_mut().unwrap();
        env_cfg.segments = ["x", "y"]
            .iter()
            .zip([1.0, 3.0])
            .map(|(g, m)| SegmentRewards {
                context: BTreeMap::from([("g".into(), g.to_string())]),
                mean_reward: BTreeMap::from([("a0".into(), 0.0), ("a1".into(), m)]),
            })
            .collect();
        let env = Environment::from_config(&config).unwrap();
        let policy = with_rule(
            &config,
            PolicyRule::Fixed {
                arm_id: "a1".into(),
            },
        );
        assert_eq!(true_policy_value(&env, &policy, 0, 0).unwrap().value, 2.0);
    }

    #[test]
    fn one_round_log() {
        let config = ExperimentConfig::desk_default();
        let env = Environment::from_config(&config).unwrap();
        let run = run_online(&env, &config, 1, 3).unwrap();
        let view = run.store.snapshot();
        assert_eq!(view.len(), 1);
        let p = view.records()[0].propensity;
        assert!((0.01..=1.0).contains(&p));
        assert!(run_online(&env, &config, 0, 3).is_err());
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let config = ExperimentConfig::desk_default();
        let env = Environment::from_config(&config).unwrap();
        let a = run_online(&env, &config, 500, 11).unwrap();
        let b = run_online(&env, &config, 500, 11).unwrap();
        assert_eq!(a.store.snapshot().to_jsonl(), b.store.snapshot().to_jsonl());
        let c = run_online(&env, &config, 500, 12).unwrap();
        assert_ne!(a.store.snapshot().to_jsonl(), c.store.snapshot().to_jsonl());
    }

    #[test]
    fn one_arm_environment() {
        let config = single_segment(
            &[1.5],
            NoiseKind::Gaussian {
                sigma: 1.0,
                truncate_at_zero: false,
            },
        );
        let env = Environment::from_config(&config).unwrap();
        let run = run_online(&env, &config, 200, 1).unwrap();
        for rec in run.store.snapshot().iter() {
            assert_eq!(rec.arm_id, "a0");
            assert_eq!(rec.propensity, 1.0);
        }
    }

    #[test]
    fn logged_propensities_match_policy_state() {
        // Replay the run: the model after t updates must reproduce the
        // propensity logged at round t.
        let config = ExperimentConfig::desk_default();
        let env = Environment::from_config(&config).unwrap();
        let run = run_online(&env, &config, 300, 5).unwrap();
        let mut policy = config.prior_snapshot().unwrap();
        for rec in run.store.snapshot().iter() {
            let probs = policy.action_probabilities(&rec.context.encoded).unwrap();
            assert_eq!(probs[rec.arm], rec.propensity);
            policy
                .observe(rec.arm, &rec.context.encoded, rec.reward)
                .unwrap();
        }
    }

    #[test]
    fn truncated_gaussian_mean() {
        let noise = NoiseKind::Gaussian {
            sigma: 1.0,
            truncate_at_zero: true,
        };
        // E[max(0, Z)] = φ(0)
        assert_relative_eq!(noise.mean(0.0), 0.398_942_280_401, epsilon = 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..200_000).map(|_| noise.sample(0.5, &mut rng)).collect();
        let (m, se) = mean_and_se(&draws);
        assert!(
            (m - noise.mean(0.5)).abs() < 4.0 * se,
            "{m} vs {}",
            noise.mean(0.5)
        );
    }

    #[test]
    fn other_noise_models_preserve_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for noise in [
            NoiseKind::LogNormal { sigma: 0.5 },
            NoiseKind::BernoulliScaled { scale: 5.0 },
        ] {
            assert_eq!(noise.mean(1.5), 1.5);
            let draws: Vec<f64> = (0..200_000).map(|_| noise.sample(1.5, &mut rng)).collect();
            let (m, se) = mean_and_se(&draws);
            assert!((m - 1.5).abs() < 4.0 * se, "{noise:?}: {m}");
        }
    }

    #[test]
    fn numeric_fields_fall_back_to_monte_carlo() {
        let mut config = single_segment(&[1.0, 1.0], NoiseKind::None);
        config
            .schema
            .fields
            .push(ContextField::numeric("spend", 0.0, 10.0));
        config.environment.as_mut().unwrap().numeric_effects = vec![NumericEffect {
            field: "spend".into(),
            slopes: BTreeMap::from([("a1".into(), 2.0)]),
        }];
        let env = Environment::from_config(&config).unwrap();
        assert!(!env.is_enumerable());
        // a1 mean = 1 + 2·U(0,1) → expectation 2
        let policy = with_rule(
            &config,
            PolicyRule::Fixed {
                arm_id: "a1".into(),
            },
        );
        let v = true_policy_value(&env, &policy, 40_000, 9).unwrap();
        assert_eq!(v.method, TruthMethod::MonteCarlo);
        assert!((v.value - 2.0).abs() < 4.0 * v.se, "{v:?}");
    }

    #[test]
    fn environment_validation() {
        let mut config = ExperimentConfig::desk_default();
        config.environment.as_mut().unwrap().segments.pop();
        let err = Environment::from_config(&config).unwrap_err();
        assert!(err.to_string().contains("3 of 4"), "{err}");

        let mut config = ExperimentConfig::desk_default();
        config.environment.as_mut().unwrap().fields = vec![FieldDistribution::Categorical {
            field: "country".into(),
            probabilities: BTreeMap::from([("A".into(), 0.7), ("B".into(), 0.7)]),
        }];
        assert!(Environment::from_config(&config).is_err());

        let mut config = ExperimentConfig::desk_default();
        config.environment = None;
        assert!(Environment::from_config(&config).is_err());
    }

    #[test]
    fn skewed_level_probabilities() {
        let mut config = ExperimentConfig::desk_default();
        config.environment.as_mut().unwrap().fields = vec![FieldDistribution::Categorical {
            field: "country".into(),
            probabilities: BTreeMap::from([("A".into(), 1.0), ("B".into(), 0.0)]),
        }];
        let env = Environment::from_config(&config).unwrap();
        assert_eq!(env.segments().len(), 2);
        let total: f64 = env.segments().iter().map(|(p, _)| p).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(
                env.sample_context(&mut rng).raw["country"],
                ContextValue::from("A")
            );
        }
    }
}
