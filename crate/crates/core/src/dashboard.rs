//! Data behind the three interface sections: top-level performance, the
//! variant table and the per-context views (radar dots and context bars).
//!
//! Everything here is a pure function of `(view, policy, config)`; the
//! serialized payload is byte-stable for identical inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EstimatorSettings, ExperimentConfig, GoalMetric};
use crate::context::{ContextVector, RawContext};
use crate::engine::{argmax, EngineError, PolicySnapshot};
use crate::ope::OpeError;
use crate::stats::weighted_quantile;
use crate::store::LogView;
use crate::value_gain::{value_gain, AblationSpec, ValueGainError, ValueGainReport};

/// Version of the payload document. Bumped on any field change.
pub const SCHEMA_VERSION: u32 = 1;

/// Fewer logged contexts than this marks a variant's percentiles as
/// low-sample.
pub const LOW_SAMPLE_CONTEXTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DashboardError {
    #[error("empty log")]
    EmptyLog,
    #[error("log catalog does not match the experiment configuration")]
    CatalogMismatch,
    #[error("{section}: {source}")]
    Section {
        section: &'static str,
        #[source]
        source: ValueGainError,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl DashboardError {
    pub fn code(&self) -> &'static str {
        match self {
            DashboardError::EmptyLog => "empty_log",
            DashboardError::CatalogMismatch => "catalog_mismatch",
            DashboardError::Section { source, .. } => source.code(),
            DashboardError::Engine(_) => "policy_failure",
        }
    }
}

fn section(name: &'static str) -> impl Fn(ValueGainError) -> DashboardError {
    move |source| DashboardError::Section {
        section: name,
        source,
    }
}

// ── Payload ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DashboardPayload {
    pub schema_version: u32,
    pub experiment_id: String,
    pub goal_metric: GoalMetric,
    pub estimator: EstimatorSettings,
    pub n_records: usize,
    pub top_level: TopLevel,
    pub variant_rows: Vec<VariantRow>,
    pub radar: Vec<RadarDot>,
    pub context_bars: Vec<ContextBar>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerBasis {
    /// Distinct `user_id` values.
    UserId,
    /// One player per record (the log has no user key).
    Records,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopLevel {
    /// `100 · (v^π − v^base) / v^base`; `None` when undefined.
    pub uplift_vs_original_pct: Option<f64>,
    pub uplift_vs_original_se_pct: Option<f64>,
    /// Set when the uplift cannot be shown, with the reason.
    pub uplift_flag: Option<String>,
    pub players: usize,
    pub players_basis: PlayerBasis,
    pub reward_per_player: f64,
    pub units: String,
    /// The baseline-only report the uplift is derived from.
    pub baseline_gain: ValueGainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub arm_id: String,
    pub label: String,
    pub is_baseline: bool,
    /// Mean, 10th and 90th percentile of `μ̂(arm, x_i)` over logged contexts.
    pub mean_reward: f64,
    pub p10: f64,
    pub p90: f64,
    /// Gain of the arm's presence: `value_gain(remove_arm(arm)).gain`.
    pub expected_benefit: Option<f64>,
    pub expected_benefit_se: Option<f64>,
    pub benefit_flag: Option<String>,
    /// Share of records where the arm was shown.
    pub display_share: f64,
    /// Share of records where the arm is the model's predicted best.
    pub predicted_best_share: f64,
    pub n_contexts: usize,
    pub low_sample: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadarFlag {
    /// The baseline is predicted best; the dot sits at the origin.
    BaselineBest,
    /// Predicted baseline reward ≤ 0, so relative uplift is undefined.
    NonpositiveBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarDot {
    pub context_key: String,
    pub context: RawContext,
    pub best_arm_id: String,
    /// Predicted relative uplift of the best arm over the baseline, clamped
    /// at 0.
    pub uplift: f64,
    /// `uplift` divided by the largest uplift in the chart; in `[0, 1]`.
    pub distance: f64,
    pub records: usize,
    pub flag: Option<RadarFlag>,
    /// `μ̂(arm, x)` for every arm, keyed by arm id.
    pub predictions: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBar {
    pub field: String,
    pub gain: f64,
    pub gain_se: f64,
    pub relative_uplift: Option<f64>,
}

impl DashboardPayload {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("payload is serializable");
        s.push('\n');
        s
    }
}

// ── Sections ────────────────────────────────────────────────────────────

/// Distinct contexts in first-seen order with their record counts.
struct DistinctContexts<'a> {
    contexts: Vec<(&'a ContextVector, usize)>,
}

impl<'a> DistinctContexts<'a> {
    fn of(view: &'a LogView) -> Self {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut contexts: Vec<(&ContextVector, usize)> = Vec::new();
        for rec in view.iter() {
            let key = rec.context.key();
            match index.get(&key) {
                Some(&i) => contexts[i].1 += 1,
                None => {
                    index.insert(key, contexts.len());
                    contexts.push((&rec.context, 1));
                }
            }
        }
        Self { contexts }
    }
}

pub fn top_level_metrics(
    view: &LogView,
    policy: &PolicySnapshot,
    config: &ExperimentConfig,
) -> Result<TopLevel, DashboardError> {
    if view.is_empty() {
        return Err(DashboardError::EmptyLog);
    }
    let spec = AblationSpec::baseline_only(config.estimator.kind);
    let baseline_gain = value_gain(
        view,
        policy,
        &spec,
        config.estimator.clip,
        config.require_surviving_baseline,
    )
    .map_err(section("top_level"))?;
    top_level_from_report(view, config, baseline_gain)
}

fn top_level_from_report(
    view: &LogView,
    config: &ExperimentConfig,
    baseline_gain: ValueGainReport,
) -> Result<TopLevel, DashboardError> {
    let all_have_users = view.iter().all(|r| r.user_id.is_some());
    let (players, players_basis) = if all_have_users {
        let distinct: std::collections::BTreeSet<&str> =
            view.iter().filter_map(|r| r.user_id.as_deref()).collect();
        (distinct.len(), PlayerBasis::UserId)
    } else {
        (view.len(), PlayerBasis::Records)
    };
    let total: f64 = view.iter().map(|r| r.reward).sum();
    let uplift_flag = baseline_gain.relative_uplift.is_none().then(|| {
        format!(
            "undefined: baseline value estimate {} is not positive",
            baseline_gain.v_pibar.value
        )
    });
    Ok(TopLevel {
        uplift_vs_original_pct: baseline_gain.relative_uplift.map(|u| 100.0 * u),
        uplift_vs_original_se_pct: baseline_gain.relative_uplift_se.map(|s| 100.0 * s),
        uplift_flag,
        players,
        players_basis,
        reward_per_player: total / players as f64,
        units: config.goal_metric.units.clone(),
        baseline_gain,
    })
}

pub fn variant_table(
    view: &LogView,
    policy: &PolicySnapshot,
    config: &ExperimentConfig,
) -> Result<Vec<VariantRow>, DashboardError> {
    if view.is_empty() {
        return Err(DashboardError::EmptyLog);
    }
    let n = view.len();
    let arms = policy.arms();
    let distinct = DistinctContexts::of(view);
    // Per distinct context: predictions for all arms.
    let predictions = distinct
        .contexts
        .iter()
        .map(|(ctx, _)| policy.predicted_means(&ctx.encoded))
        .collect::<Result<Vec<_>, _>>()?;
    let mut shown = vec![0usize; arms.len()];
    for rec in view.iter() {
        shown[rec.arm] += 1;
    }
    let mut best = vec![0usize; arms.len()];
    for ((_, count), preds) in distinct.contexts.iter().zip(&predictions) {
        best[argmax(preds, arms)] += count;
    }

    let mut rows = Vec::with_capacity(arms.len());
    for (k, arm) in arms.iter().enumerate() {
        let mut runs: Vec<(f64, usize)> = distinct
            .contexts
            .iter()
            .zip(&predictions)
            .map(|((_, count), preds)| (preds[k], *count))
            .collect();
        runs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mean = runs.iter().map(|(v, c)| v * *c as f64).sum::<f64>() / n as f64;

        let spec = AblationSpec::remove_arm(&arm.arm_id, config.estimator.kind);
        let (benefit, benefit_se, benefit_flag) = match value_gain(
            view,
            policy,
            &spec,
            config.estimator.clip,
            config.require_surviving_baseline,
        ) {
            Ok(report) => (Some(report.gain), Some(report.gain_se), None),
            // Expected failures for a single row are reported in place so the
            // rest of the table still renders.
            Err(e @ ValueGainError::InvalidSpec(_))
            | Err(e @ ValueGainError::Engine(_))
            | Err(e @ ValueGainError::Estimator(OpeError::NoOverlap))
            | Err(e @ ValueGainError::Estimator(OpeError::Engine(_))) => {
                (None, None, Some(e.to_string()))
            }
            Err(e) => return Err(section("variant_rows")(e)),
        };
        rows.push(VariantRow {
            arm_id: arm.arm_id.clone(),
            label: arm.label.clone(),
            is_baseline: arm.is_baseline,
            mean_reward: mean,
            p10: weighted_quantile(&runs, 0.1),
            p90: weighted_quantile(&runs, 0.9),
            expected_benefit: benefit,
            expected_benefit_se: benefit_se,
            benefit_flag,
            display_share: shown[k] as f64 / n as f64,
            predicted_best_share: best[k] as f64 / n as f64,
            n_contexts: n,
            low_sample: n < LOW_SAMPLE_CONTEXTS,
        });
    }
    Ok(rows)
}

pub fn radar_data(
    view: &LogView,
    policy: &PolicySnapshot,
) -> Result<Vec<RadarDot>, DashboardError> {
    if view.is_empty() {
        return Err(DashboardError::EmptyLog);
    }
    let arms = policy.arms();
    let base = policy.baseline_index();
    let mut dots: Vec<RadarDot> = DistinctContexts::of(view)
        .contexts
        .into_iter()
        .map(|(ctx, records)| -> Result<RadarDot, EngineError> {
            let preds = policy.predicted_means(&ctx.encoded)?;
            let best = argmax(&preds, arms);
            let (uplift, flag) = if best == base {
                (0.0, Some(RadarFlag::BaselineBest))
            } else if preds[base].is_nan() || preds[base] <= 0.0 {
                (0.0, Some(RadarFlag::NonpositiveBaseline))
            } else {
                (((preds[best] - preds[base]) / preds[base]).max(0.0), None)
            };
            Ok(RadarDot {
                context_key: ctx.key(),
                context: ctx.raw.clone(),
                best_arm_id: arms[best].arm_id.clone(),
                uplift,
                distance: 0.0,
                records,
                flag,
                predictions: arms
                    .iter()
                    .zip(&preds)
                    .map(|(a, p)| (a.arm_id.clone(), *p))
                    .collect(),
            })
        })
        .collect::<Result<_, _>>()?;
    let max = dots.iter().map(|d| d.uplift).fold(0.0, f64::max);
    if max > 0.0 {
        for dot in &mut dots {
            dot.distance = (dot.uplift / max).clamp(0.0, 1.0);
        }
    }
    dots.sort_by(|a, b| a.context_key.cmp(&b.context_key));
    Ok(dots)
}

pub fn context_bars(
    view: &LogView,
    policy: &PolicySnapshot,
    config: &ExperimentConfig,
) -> Result<Vec<ContextBar>, DashboardError> {
    if view.is_empty() {
        return Err(DashboardError::EmptyLog);
    }
    view.catalog()
        .schema
        .fields
        .iter()
        .map(|field| {
            let spec = AblationSpec::remove_context_field(&field.name, config.estimator.kind);
            let report = value_gain(
                view,
                policy,
                &spec,
                config.estimator.clip,
                config.require_surviving_baseline,
            )
            .map_err(section("context_bars"))?;
            Ok(ContextBar {
                field: field.name.clone(),
                gain: report.gain,
                gain_se: report.gain_se,
                relative_uplift: report.relative_uplift,
            })
        })
        .collect()
}

/// Assembles every section into one payload.
pub fn assemble_dashboard(
    view: &LogView,
    policy: &PolicySnapshot,
    config: &ExperimentConfig,
) -> Result<DashboardPayload, DashboardError> {
    if view.is_empty() {
        return Err(DashboardError::EmptyLog);
    }
    if view.catalog().arms != config.arms
        || view.catalog().schema != config.schema
        || policy.arms() != config.arms.as_slice()
    {
        return Err(DashboardError::CatalogMismatch);
    }
    // Sections are independent; compute them on scoped threads and assemble
    // in a fixed order.
    let (top_level, variant_rows, radar, context_bars) = std::thread::scope(|s| {
        let top = s.spawn(|| top_level_metrics(view, policy, config));
        let variants = s.spawn(|| variant_table(view, policy, config));
        let bars = s.spawn(|| context_bars(view, policy, config));
        let radar = radar_data(view, policy);
        (
            top.join().expect("top-level section panicked"),
            variants.join().expect("variant section panicked"),
            radar,
            bars.join().expect("context-bar section panicked"),
        )
    });
    Ok(DashboardPayload {
        schema_version: SCHEMA_VERSION,
        experiment_id: config.experiment_id.clone(),
        goal_metric: config.goal_metric.clone(),
        estimator: config.estimator.clone(),
        n_records: view.len(),
        top_level: top_level?,
        variant_rows: variant_rows?,
        radar: radar?,
        context_bars: context_bars?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{raw_context, Arm, ContextField, ContextSchema};
    use crate::engine::PolicyRule;
    use crate::store::{Catalog, LogRecord, LogStore};
    use chrono::{TimeZone, Utc};

    /// One categorical field `g`, two arms, model trained on the records.
    fn fixture(
        rows: &[(&str, usize, f64)],
        levels: &[&str],
    ) -> (ExperimentConfig, PolicySnapshot, LogView) {
        let mut config = ExperimentConfig::desk_default();
        config.environment = None;
        config.arms = vec![
            Arm::new("base", "Base", true),
            Arm::new("alt", "Alt", false),
        ];
        config.schema = ContextSchema::new(vec![ContextField::categorical("g", levels)]).unwrap();
        config.policy.rule = PolicyRule::Uniform;
        config.policy.p_min = 0.0;
        let mut store = LogStore::new(Catalog::from_config(&config));
        let mut model = config.prior_model().unwrap();
        for (i, (level, arm, reward)) in rows.iter().enumerate() {
            let ctx = config.schema.encode(&raw_context([("g", *level)])).unwrap();
            model.update_index(*arm, &ctx.encoded, *reward).unwrap();
            store
                .append(LogRecord {
                    record_id: format!("r{i}"),
                    ts: Utc.timestamp_opt(i as i64, 0).unwrap(),
                    context: ctx,
                    arm_id: config.arms[*arm].arm_id.clone(),
                    arm: *arm,
                    propensity: 0.5,
                    reward: *reward,
                    user_id: None,
                })
                .unwrap();
        }
        let policy = config
            .prior_snapshot()
            .unwrap()
            .with_model(model, vec![])
            .unwrap();
        (config, policy, store.snapshot())
    }

    #[test]
    fn reward_per_player_arithmetic() {
        // 10 records, total reward 25.
        let rows: Vec<(&str, usize, f64)> = (0..10).map(|i| ("x", i % 2, 2.5)).collect();
        let (config, policy, view) = fixture(&rows, &["x"]);
        let top = top_level_metrics(&view, &policy, &config).unwrap();
        assert_eq!(top.players, 10);
        assert_eq!(top.players_basis, PlayerBasis::Records);
        assert!((top.reward_per_player - 2.5).abs() < 1e-12);
    }

    #[test]
    fn baseline_only_log_has_zero_uplift() {
        let mut config = ExperimentConfig::desk_default();
        config.environment = None;
        let mut store = LogStore::for_config(&config);
        let policy = config
            .prior_snapshot()
            .unwrap()
            .with_rule(
                PolicyRule::Fixed {
                    arm_id: "p099".into(),
                },
                0.0,
            )
            .unwrap();
        for i in 0..20 {
            let ctx = config
                .schema
                .encode(&raw_context([("country", "A"), ("platform", "ios")]))
                .unwrap();
            store
                .append(LogRecord {
                    record_id: format!("r{i}"),
                    ts: Utc.timestamp_opt(i, 0).unwrap(),
                    context: ctx,
                    arm_id: "p099".into(),
                    arm: 0,
                    propensity: 1.0,
                    reward: 1.0 + i as f64,
                    user_id: None,
                })
                .unwrap();
        }
        let top = top_level_metrics(&store.snapshot(), &policy, &config).unwrap();
        assert_eq!(top.uplift_vs_original_pct, Some(0.0));
    }

    #[test]
    fn uplift_flagged_when_baseline_value_not_positive() {
        let rows = [("x", 0, 0.0), ("x", 1, 1.0)];
        let (config, policy, view) = fixture(&rows, &["x"]);
        let top = top_level_metrics(&view, &policy, &config).unwrap();
        assert_eq!(top.uplift_vs_original_pct, None);
        assert!(top.uplift_flag.unwrap().starts_with("undefined"));
        assert!((top.reward_per_player - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distinct_users_are_counted_when_present() {
        let rows: Vec<(&str, usize, f64)> = (0..6).map(|i| ("x", i % 2, 1.0)).collect();
        let (config, policy, view) = fixture(&rows, &["x"]);
        let mut store = LogStore::new(view.catalog().clone());
        for (i, rec) in view.iter().enumerate() {
            let mut rec = rec.clone();
            rec.user_id = Some(format!("u{}", i % 3));
            store.append(rec).unwrap();
        }
        let top = top_level_metrics(&store.snapshot(), &policy, &config).unwrap();
        assert_eq!(top.players, 3);
        assert_eq!(top.players_basis, PlayerBasis::UserId);
        assert!((top.reward_per_player - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_model_gives_degenerate_percentiles() {
        let rows: Vec<(&str, usize, f64)> =
            (0..12).map(|i| (["x", "y"][i % 2], i % 2, 1.0)).collect();
        let (config, policy, view) = fixture(&rows, &["x", "y"]);
        // Swap in a prior-only model: μ̂ ≡ 0.
        let policy = policy
            .with_model(config.prior_model().unwrap(), vec![])
            .unwrap();
        for row in variant_table(&view, &policy, &config).unwrap() {
            assert_eq!((row.mean_reward, row.p10, row.p90), (0.0, 0.0, 0.0));
            assert!(!row.low_sample);
        }
    }

    #[test]
    fn shares_partition_records() {
        let rows = [("x", 0, 1.0), ("x", 1, 2.0), ("y", 1, 3.0), ("y", 1, 0.5)];
        let (config, policy, view) = fixture(&rows, &["x", "y"]);
        let table = variant_table(&view, &policy, &config).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table[0].display_share, 0.25);
        assert_eq!(table[1].display_share, 0.75);
        let best: f64 = table.iter().map(|r| r.predicted_best_share).sum();
        assert!((best - 1.0).abs() < 1e-12);
        assert!(table.iter().all(|r| r.low_sample));
    }

    #[test]
    fn radar_normalization() {
        // Segment x: base 1.0 vs alt 1.1 (uplift 0.1); y: base 1.0 vs alt 1.2 (0.2).
        // Many identical rewards make the ridge estimates close to the targets;
        // the normalization itself is checked exactly on the raw uplifts.
        let mut rows = Vec::new();
        for _ in 0..50 {
            rows.extend([("x", 0, 1.0), ("x", 1, 1.1), ("y", 0, 1.0), ("y", 1, 1.2)]);
        }
        let (_, policy, view) = fixture(&rows, &["x", "y"]);
        let dots = radar_data(&view, &policy).unwrap();
        assert_eq!(dots.len(), 2);
        assert_eq!(dots[1].distance, 1.0);
        assert!((dots[0].distance - dots[0].uplift / dots[1].uplift).abs() < 1e-15);
        assert!((dots[0].uplift - 0.1).abs() < 0.01, "{}", dots[0].uplift);
        assert!((dots[0].distance - 0.5).abs() < 0.05);
        assert!(dots
            .iter()
            .all(|d| d.best_arm_id == "alt" && d.flag.is_none()));
    }

    #[test]
    fn radar_baseline_best_sits_at_origin() {
        let rows = [("x", 0, 2.0), ("x", 1, 1.0), ("y", 0, 1.0), ("y", 1, 3.0)];
        let (_, policy, view) = fixture(&rows, &["x", "y"]);
        let dots = radar_data(&view, &policy).unwrap();
        let x = dots.iter().find(|d| d.context_key == "g=x").unwrap();
        assert_eq!(x.best_arm_id, "base");
        assert_eq!(x.distance, 0.0);
        assert_eq!(x.flag, Some(RadarFlag::BaselineBest));
        let y = dots.iter().find(|d| d.context_key == "g=y").unwrap();
        assert_eq!(y.distance, 1.0);
    }

    #[test]
    fn single_context_self_normalizes() {
        let rows = [("x", 0, 1.0), ("x", 1, 3.0)];
        let (_, policy, view) = fixture(&rows, &["x"]);
        let dots = radar_data(&view, &policy).unwrap();
        assert_eq!(dots.len(), 1);
        assert_eq!(dots[0].distance, 1.0);
    }

    #[test]
    fn empty_view_is_an_error() {
        let (config, policy, view) = fixture(&[], &["x"]);
        let err = assemble_dashboard(&view, &policy, &config).unwrap_err();
        assert_eq!(err.to_string(), "empty log");
    }

    #[test]
    fn model_mismatch_is_rejected() {
        let rows = [("x", 0, 1.0)];
        let (mut config, policy, view) = fixture(&rows, &["x"]);
        config.arms[1].label = "Other".into();
        assert_eq!(
            assemble_dashboard(&view, &policy, &config).unwrap_err(),
            DashboardError::CatalogMismatch
        );
    }
}
