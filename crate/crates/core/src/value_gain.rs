//! Counterfactual ablations and the value gain `g(τ) = v^π − v^π̄`.
//!
//! `v^π` is the on-policy mean of the log; `v^π̄` is an off-policy estimate
//! of the ablated policy against the logged propensities. The ablation
//! families:
//!
//! - `baseline_only`: every context gets the baseline arm.
//! - `remove_arm`: the arm's probability is zeroed after flooring and the
//!   remaining mass renormalized per context; the model is kept.
//! - `remove_context_field`: the per-arm ridge model is refit on the log with
//!   the field's encoded components zeroed; rule and hyperparameters carry
//!   over.
//! - `identity`: ablates nothing; exists for tests and sanity checks.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, LinearRewardModel, PolicyRule, PolicySnapshot};
use crate::ope::{self, EstimatorKind, OpeError, ValueEstimate};
use crate::store::{Catalog, LogView};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValueGainError {
    /// The spec does not fit the experiment (maps to a client error).
    #[error("invalid ablation: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Estimator(#[from] OpeError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl ValueGainError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ValueGainError::InvalidSpec(_) => "invalid_spec",
            ValueGainError::Estimator(OpeError::EmptyLog) => "empty_log",
            ValueGainError::Estimator(OpeError::NoOverlap) => "no_overlap",
            ValueGainError::Estimator(OpeError::Engine(EngineError::NoSurvivingSupport))
            | ValueGainError::Engine(EngineError::NoSurvivingSupport) => "no_surviving_support",
            ValueGainError::Estimator(_) => "estimator_failure",
            ValueGainError::Engine(_) => "policy_failure",
        }
    }
}

// ── Specs ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Ablation {
    Identity,
    BaselineOnly,
    RemoveArm { arm_id: String },
    RemoveContextField { field: String },
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ablation::Identity => write!(f, "identity"),
            Ablation::BaselineOnly => write!(f, "baseline_only"),
            Ablation::RemoveArm { arm_id } => write!(f, "remove_arm({arm_id})"),
            Ablation::RemoveContextField { field } => write!(f, "remove_context_field({field})"),
        }
    }
}

fn default_estimator() -> EstimatorKind {
    EstimatorKind::Ips
}

/// The set τ of removed components plus the estimator for `v^π̄`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub ablation: Ablation,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorKind,
}

impl AblationSpec {
    pub fn new(ablation: Ablation, estimator: EstimatorKind) -> Self {
        Self {
            ablation,
            estimator,
        }
    }

    pub fn identity() -> Self {
        Self::new(Ablation::Identity, EstimatorKind::Ips)
    }

    pub fn baseline_only(estimator: EstimatorKind) -> Self {
        Self::new(Ablation::BaselineOnly, estimator)
    }

    pub fn remove_arm(arm_id: impl Into<String>, estimator: EstimatorKind) -> Self {
        Self::new(
            Ablation::RemoveArm {
                arm_id: arm_id.into(),
            },
            estimator,
        )
    }

    pub fn remove_context_field(field: impl Into<String>, estimator: EstimatorKind) -> Self {
        Self::new(
            Ablation::RemoveContextField {
                field: field.into(),
            },
            estimator,
        )
    }

    pub fn validate(
        &self,
        catalog: &Catalog,
        require_surviving_baseline: bool,
    ) -> Result<(), ValueGainError> {
        let invalid = |m: String| Err(ValueGainError::InvalidSpec(m));
        if self.estimator == EstimatorKind::OnPolicy && self.ablation != Ablation::Identity {
            return invalid("on_policy cannot estimate a counterfactual policy".into());
        }
        match &self.ablation {
            Ablation::Identity | Ablation::BaselineOnly => Ok(()),
            Ablation::RemoveArm { arm_id } => {
                let Some(idx) = catalog.arm_index(arm_id) else {
                    return invalid(format!("unknown arm `{arm_id}`"));
                };
                if catalog.arms.len() == 1 {
                    return invalid("removing the only arm leaves no arms".into());
                }
                if require_surviving_baseline && catalog.arms[idx].is_baseline {
                    return invalid(format!(
                        "`{arm_id}` is the baseline and this experiment requires a surviving baseline"
                    ));
                }
                Ok(())
            }
            Ablation::RemoveContextField { field } => {
                if catalog.schema.field(field).is_none() {
                    return invalid(format!("unknown context field `{field}`"));
                }
                Ok(())
            }
        }
    }
}

// ── Reports ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGainReport {
    pub spec: AblationSpec,
    pub v_pi: ValueEstimate,
    pub v_pibar: ValueEstimate,
    /// `v_pi.value − v_pibar.value`.
    pub gain: f64,
    /// Standard errors of the two estimates combined in quadrature.
    pub gain_se: f64,
    /// `gain / v_pibar.value`; `None` when `v_pibar.value ≤ 0`.
    pub relative_uplift: Option<f64>,
    /// Delta-method standard error of `relative_uplift`.
    pub relative_uplift_se: Option<f64>,
}

/// Relative uplift `a/b − 1` with a delta-method standard error treating
/// the two estimates as independent.
pub fn relative_uplift(v_pi: &ValueEstimate, v_pibar: &ValueEstimate) -> Option<(f64, f64)> {
    let (a, b) = (v_pi.value, v_pibar.value);
    if b.is_nan() || b <= 0.0 {
        return None;
    }
    let uplift = (a - b) / b;
    let se = ((v_pi.se / b).powi(2) + (a * v_pibar.se / (b * b)).powi(2)).sqrt();
    Some((uplift, se))
}

// ── Operations ──────────────────────────────────────────────────────────

/// Per-arm ridge refit on the view with `masked_dims` zeroed in every
/// context.
pub fn refit_masked(
    view: &LogView,
    arm_ids: Vec<String>,
    dim: usize,
    lambda: f64,
    masked_dims: &[usize],
) -> Result<LinearRewardModel, EngineError> {
    let mut model = LinearRewardModel::new(arm_ids, dim, lambda)?;
    let mut x = vec![0.0; dim];
    for rec in view.iter() {
        x.copy_from_slice(&rec.context.encoded);
        for &d in masked_dims {
            x[d] = 0.0;
        }
        model.update_index(rec.arm, &x, rec.reward)?;
    }
    Ok(model)
}

/// Builds π̄ from π. `require_surviving_baseline` forbids removing the
/// baseline arm.
pub fn build_ablated_policy(
    policy: &PolicySnapshot,
    view: &LogView,
    spec: &AblationSpec,
    require_surviving_baseline: bool,
) -> Result<PolicySnapshot, ValueGainError> {
    let catalog = view.catalog();
    spec.validate(catalog, require_surviving_baseline)?;
    if catalog.arms != policy.arms() {
        return Err(ValueGainError::InvalidSpec(
            "policy catalog does not match the log catalog".into(),
        ));
    }
    let ablated = match &spec.ablation {
        Ablation::Identity => policy.clone(),
        Ablation::BaselineOnly => {
            let baseline = policy.arms()[policy.baseline_index()].arm_id.clone();
            policy
                .clone()
                .with_rule(PolicyRule::Fixed { arm_id: baseline }, 0.0)?
        }
        Ablation::RemoveArm { arm_id } => policy.clone().without_arm(arm_id)?,
        Ablation::RemoveContextField { field } => {
            let span = catalog
                .schema
                .field_span(field)
                .expect("validated field name");
            let mut masked: Vec<usize> = policy.masked_dims().to_vec();
            masked.extend(span);
            let model = policy.model();
            let refit = refit_masked(
                view,
                model.arm_ids().to_vec(),
                model.dim(),
                model.lambda(),
                &masked,
            )?;
            policy.clone().with_model(refit, masked)?
        }
    };
    Ok(ablated)
}

/// `g(τ)` for one spec. `clip` caps importance weights; the model-based
/// estimators use the policy's own reward model.
pub fn value_gain(
    view: &LogView,
    policy: &PolicySnapshot,
    spec: &AblationSpec,
    clip: Option<f64>,
    require_surviving_baseline: bool,
) -> Result<ValueGainReport, ValueGainError> {
    let v_pi = ope::on_policy(view)?;
    if spec.ablation == Ablation::Identity {
        spec.validate(view.catalog(), require_surviving_baseline)?;
        return Ok(ValueGainReport {
            spec: spec.clone(),
            v_pibar: v_pi.clone(),
            gain: 0.0,
            gain_se: 0.0,
            relative_uplift: (v_pi.value > 0.0).then_some(0.0),
            relative_uplift_se: (v_pi.value > 0.0).then_some(0.0),
            v_pi,
        });
    }
    let target = build_ablated_policy(policy, view, spec, require_surviving_baseline)?;
    let v_pibar = ope::estimate(spec.estimator, view, &target, policy.model(), clip)?;
    let gain = v_pi.value - v_pibar.value;
    let gain_se = v_pi.se.hypot(v_pibar.se);
    let uplift = relative_uplift(&v_pi, &v_pibar);
    Ok(ValueGainReport {
        spec: spec.clone(),
        relative_uplift: uplift.map(|u| u.0),
        relative_uplift_se: uplift.map(|u| u.1),
        v_pi,
        v_pibar,
        gain,
        gain_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::context::{raw_context, Arm, ContextField, ContextSchema};
    use crate::store::{LogRecord, LogStore};
    use chrono::{TimeZone, Utc};

    fn three_arm_uniform() -> (PolicySnapshot, LogView) {
        let arms: Vec<Arm> = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, id)| Arm::new(*id, id.to_uppercase(), i == 0))
            .collect();
        let schema = ContextSchema::new(vec![ContextField::categorical("g", &["x"])]).unwrap();
        let model = LinearRewardModel::new(
            arms.iter().map(|a| a.arm_id.clone()).collect(),
            schema.dim(),
            1.0,
        )
        .unwrap();
        let policy = PolicySnapshot::new(PolicyRule::Uniform, model, arms.clone(), 0.0, 0).unwrap();
        let mut store = LogStore::new(Catalog {
            arms,
            schema: schema.clone(),
        });
        let ctx = schema.encode(&raw_context([("g", "x")])).unwrap();
        for (i, r) in [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].iter().enumerate() {
            let arm = i % 3;
            store
                .append(LogRecord {
                    record_id: format!("r{i}"),
                    ts: Utc.timestamp_opt(i as i64, 0).unwrap(),
                    context: ctx.clone(),
                    arm_id: ["a", "b", "c"][arm].into(),
                    arm,
                    propensity: 1.0 / 3.0,
                    reward: *r,
                    user_id: None,
                })
                .unwrap();
        }
        (policy, store.snapshot())
    }

    #[test]
    fn baseline_only_is_point_mass_on_baseline() {
        let (policy, view) = three_arm_uniform();
        let spec = AblationSpec::baseline_only(EstimatorKind::Ips);
        let ablated = build_ablated_policy(&policy, &view, &spec, false).unwrap();
        for rec in view.iter() {
            assert_eq!(
                ablated.action_probabilities(&rec.context.encoded).unwrap(),
                vec![1.0, 0.0, 0.0]
            );
        }
    }

    #[test]
    fn remove_arm_renormalizes_uniform() {
        let (policy, view) = three_arm_uniform();
        let spec = AblationSpec::remove_arm("b", EstimatorKind::Ips);
        let ablated = build_ablated_policy(&policy, &view, &spec, false).unwrap();
        let p = ablated
            .action_probabilities(&view.records()[0].context.encoded)
            .unwrap();
        assert_eq!(p, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn identity_gain_is_exactly_zero() {
        let (policy, view) = three_arm_uniform();
        let report = value_gain(&view, &policy, &AblationSpec::identity(), None, false).unwrap();
        assert_eq!(report.gain, 0.0);
        assert_eq!(report.gain_se, 0.0);
        assert_eq!(report.v_pi, report.v_pibar);
    }

    #[test]
    fn hand_computed_gains() {
        // Rewards by arm: a {1,4}, b {2,5}, c {3,6}; uniform logging, p = 1/3.
        let (policy, view) = three_arm_uniform();
        let r = value_gain(
            &view,
            &policy,
            &AblationSpec::baseline_only(EstimatorKind::Ips),
            None,
            false,
        )
        .unwrap();
        // v^π = 3.5; baseline-only IPS = (1/6)·3·(1+4) = 2.5
        assert!((r.v_pi.value - 3.5).abs() < 1e-12);
        assert!((r.v_pibar.value - 2.5).abs() < 1e-12);
        assert!((r.gain - 1.0).abs() < 1e-12);
        assert!((r.relative_uplift.unwrap() - 0.4).abs() < 1e-12);
        assert!((r.gain_se - r.v_pi.se.hypot(r.v_pibar.se)).abs() < 1e-15);

        // remove c: weights 1.5 on a and b records → (1.5/6)(1+2+4+5) = 3
        let r = value_gain(
            &view,
            &policy,
            &AblationSpec::remove_arm("c", EstimatorKind::Ips),
            None,
            false,
        )
        .unwrap();
        assert!((r.v_pibar.value - 3.0).abs() < 1e-12);
        assert!((r.gain - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        let (policy, view) = three_arm_uniform();
        let cases = [
            AblationSpec::remove_arm("zzz", EstimatorKind::Ips),
            AblationSpec::remove_context_field("nope", EstimatorKind::Ips),
            AblationSpec::baseline_only(EstimatorKind::OnPolicy),
        ];
        for spec in cases {
            let err = value_gain(&view, &policy, &spec, None, false).unwrap_err();
            assert!(
                matches!(err, ValueGainError::InvalidSpec(_)),
                "{spec:?}: {err}"
            );
            assert_eq!(err.code(), "invalid_spec");
        }
        let spec = AblationSpec::remove_arm("a", EstimatorKind::Ips);
        assert!(value_gain(&view, &policy, &spec, None, false).is_ok());
        assert!(matches!(
            value_gain(&view, &policy, &spec, None, true),
            Err(ValueGainError::InvalidSpec(_))
        ));
    }

    #[test]
    fn no_surviving_support_is_reported() {
        // Fixed rule on `b` with no floor; removing `b` leaves zero mass.
        let (policy, view) = three_arm_uniform();
        let policy = policy
            .with_rule(PolicyRule::Fixed { arm_id: "b".into() }, 0.0)
            .unwrap();
        let spec = AblationSpec::remove_arm("b", EstimatorKind::Ips);
        let err = value_gain(&view, &policy, &spec, None, false).unwrap_err();
        assert_eq!(err.code(), "no_surviving_support");
        assert!(err.to_string().contains("no surviving support"));
    }

    #[test]
    fn remove_field_masks_its_span() {
        let config = ExperimentConfig::desk_default();
        let env = crate::simulator::Environment::from_config(&config).unwrap();
        let run = crate::simulator::run_online(&env, &config, 2_000, 1).unwrap();
        let view = run.store.snapshot();
        let spec = AblationSpec::remove_context_field("country", EstimatorKind::Ips);
        let ablated = build_ablated_policy(&run.snapshot, &view, &spec, false).unwrap();
        assert_eq!(ablated.masked_dims(), &[1, 2]);
        assert_eq!(ablated.rule(), run.snapshot.rule());
        // Country no longer matters to the ablated policy.
        let a = config
            .schema
            .encode(&raw_context([("country", "A"), ("platform", "ios")]))
            .unwrap();
        let b = config
            .schema
            .encode(&raw_context([("country", "B"), ("platform", "ios")]))
            .unwrap();
        assert_eq!(
            ablated.action_probabilities(&a.encoded).unwrap(),
            ablated.action_probabilities(&b.encoded).unwrap()
        );
    }

    #[test]
    fn spec_json_shape() {
        let spec = AblationSpec::remove_arm("p999", EstimatorKind::DoublyRobust);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(
            json,
            r#"{"ablation":{"kind":"remove_arm","arm_id":"p999"},"estimator":"doubly_robust"}"#
        );
        let parsed: AblationSpec =
            serde_json::from_str(r#"{"ablation":{"kind":"baseline_only"}}"#).unwrap();
        assert_eq!(parsed.estimator, EstimatorKind::Ips);
        assert!(
            serde_json::from_str::<AblationSpec>(r#"{"ablation":{"kind":"drop_all"}}"#).is_err()
        );
    }
}
