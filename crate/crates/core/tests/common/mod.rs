//! Fixtures and simulator replications shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use bandit_lens::context::ContextField;
use bandit_lens::dashboard::context_bars;
use bandit_lens::simulator::SegmentRewards;
use bandit_lens::store::{Catalog, LogRecord, LogStore, LogView};
use bandit_lens::{
    raw_context, run_frozen, run_online, true_policy_value, value_gain, AblationSpec, Arm,
    ContextSchema, Environment, ExperimentConfig, LinearRewardModel, PolicyRule, PolicySnapshot,
};
use chrono::{TimeZone, Utc};

pub const VALUE_GAIN_ROUNDS: usize = 100_000;
pub const VALUE_GAIN_REPLICATIONS: u64 = 40;
/// Required passing share of replications.
pub const VALUE_GAIN_COVERAGE: f64 = 0.95;
pub const Z_LIMIT: f64 = 3.0;

pub const FIELD_ROUNDS: usize = 100_000;
pub const FIELD_SEEDS: u64 = 20;

pub const THOMPSON_SEEDS: u64 = 20;
pub const THOMPSON_MC: usize = 10_000;

// ── Hand fixtures ───────────────────────────────────────────────────────

/// Two arms, one context: `(x, a1, p=0.5, r=1)` and `(x, a2, p=0.5, r=0)`.
pub fn two_record_log() -> (LogView, Vec<Arm>, ContextSchema) {
    let arms = vec![Arm::new("a1", "A1", true), Arm::new("a2", "A2", false)];
    let schema = ContextSchema::new(vec![ContextField::categorical("g", &["x"])]).unwrap();
    let mut store = LogStore::new(Catalog {
        arms: arms.clone(),
        schema: schema.clone(),
    });
    let ctx = schema.encode(&raw_context([("g", "x")])).unwrap();
    for (i, (arm, reward)) in [(0usize, 1.0), (1, 0.0)].into_iter().enumerate() {
        store
            .append(LogRecord {
                record_id: format!("r{i}"),
                ts: Utc.timestamp_opt(i as i64, 0).unwrap(),
                context: ctx.clone(),
                arm_id: arms[arm].arm_id.clone(),
                arm,
                propensity: 0.5,
                reward,
                user_id: None,
            })
            .unwrap();
    }
    (store.snapshot(), arms, schema)
}

pub fn fixed_policy(arms: &[Arm], dim: usize, arm_id: &str) -> PolicySnapshot {
    let model =
        LinearRewardModel::new(arms.iter().map(|a| a.arm_id.clone()).collect(), dim, 1.0).unwrap();
    PolicySnapshot::new(
        PolicyRule::Fixed {
            arm_id: arm_id.into(),
        },
        model,
        arms.to_vec(),
        0.0,
        0,
    )
    .unwrap()
}

/// Two arms with scalar posteriors `N(0, 1)` and `N(1, 1)` at `x = [1]`:
/// `A = 1` for both, `b = 0` and `b = 1`.
pub fn scalar_thompson(mc_samples: usize, mc_seed: u64) -> PolicySnapshot {
    let arms = vec![Arm::new("a1", "A1", true), Arm::new("a2", "A2", false)];
    let model = LinearRewardModel::from_sufficient_stats(
        vec!["a1".into(), "a2".into()],
        1.0,
        vec![(vec![1.0], vec![0.0]), (vec![1.0], vec![1.0])],
    )
    .unwrap();
    PolicySnapshot::new(
        PolicyRule::Thompson {
            mc_samples,
            noise_variance: 1.0,
        },
        model,
        arms,
        0.0,
        mc_seed,
    )
    .unwrap()
}

/// The desk experiment plus a one-level categorical field `region` that
/// carries no information.
pub fn desk_with_constant_field() -> ExperimentConfig {
    let mut config = ExperimentConfig::desk_default();
    config
        .schema
        .fields
        .push(ContextField::categorical("region", &["eu"]));
    let env = config.environment.as_mut().unwrap();
    for seg in &mut env.segments {
        seg.context.insert("region".into(), "eu".into());
    }
    config.validate().unwrap();
    config
}

/// Single-segment environment with the given arm means.
pub fn single_segment(means: &[f64]) -> ExperimentConfig {
    let mut config = ExperimentConfig::desk_default();
    config.arms = (0..means.len())
        .map(|i| Arm::new(format!("a{i}"), format!("A{i}"), i == 0))
        .collect();
    config.schema = ContextSchema::new(vec![ContextField::categorical("g", &["x"])]).unwrap();
    let env = config.environment.as_mut().unwrap();
    env.segments = vec![SegmentRewards {
        context: BTreeMap::from([("g".into(), "x".into())]),
        mean_reward: config
            .arms
            .iter()
            .zip(means)
            .map(|(a, m)| (a.arm_id.clone(), *m))
            .collect(),
    }];
    config.validate().unwrap();
    config
}

// ── Simulator replications ──────────────────────────────────────────────

/// Arm whose fixed policy has the highest exact value.
pub fn globally_best_arm(env: &Environment, policy: &PolicySnapshot) -> String {
    let mut best: Option<(f64, String)> = None;
    for arm in policy.arms() {
        let fixed = policy
            .clone()
            .with_rule(
                PolicyRule::Fixed {
                    arm_id: arm.arm_id.clone(),
                },
                0.0,
            )
            .unwrap();
        let v = true_policy_value(env, &fixed, 0, 0).unwrap().value;
        if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
            best = Some((v, arm.arm_id.clone()));
        }
    }
    best.unwrap().1
}

#[derive(Debug, Clone)]
pub struct GainCheck {
    pub estimate: f64,
    pub estimate_se: f64,
    /// Expected value of the logging run minus the online value of the
    /// frozen ablated policy.
    pub truth: f64,
    pub truth_se: f64,
    /// Exact value difference using the enumerated ablated value.
    pub exact_truth: f64,
}

impl GainCheck {
    pub fn z(&self) -> f64 {
        (self.estimate - self.truth) / self.estimate_se.hypot(self.truth_se)
    }

    pub fn covered(&self) -> bool {
        self.z().abs() <= Z_LIMIT
    }
}

/// One replication: log `rounds` decisions with the learning logger, then
/// compare `value_gain(spec)` with the ground-truth difference obtained by
/// serving the frozen ablated policy online for `rounds` rounds.
pub fn value_gain_replication(
    config: &ExperimentConfig,
    rounds: usize,
    seed: u64,
    specs: &[AblationSpec],
) -> Vec<GainCheck> {
    let env = Environment::from_config(config).unwrap();
    let run = run_online(&env, config, rounds, seed).unwrap();
    let view = run.store.snapshot();
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let report =
                value_gain(&view, &run.snapshot, spec, config.estimator.clip, false).unwrap();
            let ablated =
                bandit_lens::build_ablated_policy(&run.snapshot, &view, spec, false).unwrap();
            let online =
                run_frozen(&env, &ablated, rounds, seed ^ (0xA5A5_0000 + i as u64)).unwrap();
            let exact = true_policy_value(&env, &ablated, 0, 0).unwrap().value;
            GainCheck {
                estimate: report.gain,
                estimate_se: report.gain_se,
                truth: run.expected_value - online.mean_reward,
                truth_se: online.reward_se,
                exact_truth: run.expected_value - exact,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FieldBars {
    pub informative: (f64, f64),
    pub constant: (f64, f64),
}

/// Context-bar gains for `country` (flips the best arm) and the constant
/// `region` field.
pub fn field_bars(rounds: usize, seed: u64) -> FieldBars {
    let config = desk_with_constant_field();
    let env = Environment::from_config(&config).unwrap();
    let run = run_online(&env, &config, rounds, seed).unwrap();
    let bars = context_bars(&run.store.snapshot(), &run.snapshot, &config).unwrap();
    let get = |name: &str| {
        let bar = bars.iter().find(|b| b.field == name).unwrap();
        (bar.gain, bar.gain_se)
    };
    FieldBars {
        informative: get("country"),
        constant: get("region"),
    }
}
