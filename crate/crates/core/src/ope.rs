//! Off-policy value estimators over logged feedback.
//!
//! All estimators divide by the propensity recorded at decision time, never a
//! recomputed one. Standard errors are the sample standard deviation of the
//! per-record contributions over `√n` (delta method for SNIPS).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, LinearRewardModel, PolicySnapshot};
use crate::stats::mean_and_se;
use crate::store::LogView;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpeError {
    #[error("empty log")]
    EmptyLog,
    #[error("no overlap: every importance weight is zero")]
    NoOverlap,
    #[error("target policy assigns probability to arm `{0}` which is not in the catalog")]
    ArmOutsideCatalog(String),
    #[error("reward model has no arm `{0}`")]
    ModelMissingArm(String),
    #[error("weight cap must be positive, got {0}")]
    BadClip(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ips,
    Snips,
    DirectMethod,
    DoublyRobust,
    /// Empirical mean of the logged rewards (the logging policy's own value).
    OnPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub estimator: EstimatorKind,
    /// Point estimate in goal-metric units.
    pub value: f64,
    pub se: f64,
    pub n: usize,
    /// Share of records whose importance weight hit the cap.
    pub clipped_fraction: f64,
}

// ── Target probabilities ────────────────────────────────────────────────

/// Target-policy probabilities aligned to the view's catalog, memoized per
/// distinct encoded context.
struct TargetTable<'a> {
    target: &'a PolicySnapshot,
    /// For each target arm, its index in the view catalog.
    to_view: Vec<Option<usize>>,
    view_arms: usize,
    cache: HashMap<Vec<u64>, Vec<f64>>,
}

impl<'a> TargetTable<'a> {
    fn new(view: &LogView, target: &'a PolicySnapshot) -> Self {
        let catalog = view.catalog();
        Self {
            target,
            to_view: target
                .arms()
                .iter()
                .map(|a| catalog.arm_index(&a.arm_id))
                .collect(),
            view_arms: catalog.arms.len(),
            cache: HashMap::new(),
        }
    }

    /// Probabilities over the view catalog for context `x`.
    fn probs(&mut self, x: &[f64]) -> Result<&[f64], OpeError> {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if !self.cache.contains_key(&key) {
            let raw = self.target.action_probabilities(x)?;
            let mut aligned = vec![0.0; self.view_arms];
            for (t, &p) in raw.iter().enumerate() {
                match self.to_view[t] {
                    Some(v) => aligned[v] = p,
                    None if p > 0.0 => {
                        return Err(OpeError::ArmOutsideCatalog(
                            self.target.arms()[t].arm_id.clone(),
                        ))
                    }
                    None => {}
                }
            }
            self.cache.insert(key.clone(), aligned);
        }
        Ok(&self.cache[&key])
    }
}

fn check_clip(clip: Option<f64>) -> Result<(), OpeError> {
    match clip {
        Some(c) if c.is_nan() || c <= 0.0 => Err(OpeError::BadClip(c)),
        _ => Ok(()),
    }
}

/// Importance weights `min(clip, π̄(a_i|x_i) / p_i)` and the clipped count.
fn weights(
    view: &LogView,
    target: &PolicySnapshot,
    clip: Option<f64>,
) -> Result<(Vec<f64>, usize), OpeError> {
    check_clip(clip)?;
    let mut table = TargetTable::new(view, target);
    let mut clipped = 0;
    let mut out = Vec::with_capacity(view.len());
    for rec in view.iter() {
        let ratio = table.probs(&rec.context.encoded)?[rec.arm] / rec.propensity;
        let w = match clip {
            Some(c) if ratio > c => {
                clipped += 1;
                c
            }
            _ => ratio,
        };
        out.push(w);
    }
    Ok((out, clipped))
}

/// Model predictions for every catalog arm, aligned to the view catalog.
fn model_columns(view: &LogView, model: &LinearRewardModel) -> Vec<Option<usize>> {
    view.catalog()
        .arms
        .iter()
        .map(|a| model.arm_index(&a.arm_id))
        .collect()
}

fn predict(
    model: &LinearRewardModel,
    columns: &[Option<usize>],
    view: &LogView,
    arm: usize,
    x: &[f64],
) -> Result<f64, OpeError> {
    let idx = columns[arm]
        .ok_or_else(|| OpeError::ModelMissingArm(view.catalog().arms[arm].arm_id.clone()))?;
    Ok(model.predict_index(idx, x))
}

fn estimate_from_terms(kind: EstimatorKind, terms: &[f64], clipped: usize) -> ValueEstimate {
    let (value, se) = mean_and_se(terms);
    ValueEstimate {
        estimator: kind,
        value,
        se,
        n: terms.len(),
        clipped_fraction: clipped as f64 / terms.len() as f64,
    }
}

// ── Estimators ──────────────────────────────────────────────────────────

/// Empirical mean of the logged rewards.
pub fn on_policy(view: &LogView) -> Result<ValueEstimate, OpeError> {
    if view.is_empty() {
        return Err(OpeError::EmptyLog);
    }
    let rewards: Vec<f64> = view.iter().map(|r| r.reward).collect();
    Ok(estimate_from_terms(EstimatorKind::OnPolicy, &rewards, 0))
}

/// Inverse propensity scoring: `(1/n) Σ w_i r_i`.
pub fn ips(
    view: &LogView,
    target: &PolicySnapshot,
    clip: Option<f64>,
) -> Result<ValueEstimate, OpeError> {
    if view.is_empty() {
        return Err(OpeError::EmptyLog);
    }
    let (w, clipped) = weights(view, target, clip)?;
    let terms: Vec<f64> = view.iter().zip(&w).map(|(r, w)| w * r.reward).collect();
    Ok(estimate_from_terms(EstimatorKind::Ips, &terms, clipped))
}

/// Self-normalized IPS: `Σ w_i r_i / Σ w_i`.
pub fn snips(
    view: &LogView,
    target: &PolicySnapshot,
    clip: Option<f64>,
) -> Result<ValueEstimate, OpeError> {
    if view.is_empty() {
        return Err(OpeError::EmptyLog);
    }
    let (w, clipped) = weights(view, target, clip)?;
    let sum_w: f64 = w.iter().sum();
    if sum_w <= 0.0 {
        return Err(OpeError::NoOverlap);
    }
    let value = view.iter().zip(&w).map(|(r, w)| w * r.reward).sum::<f64>() / sum_w;
    let resid: f64 = view
        .iter()
        .zip(&w)
        .map(|(r, w)| (w * (r.reward - value)).powi(2))
        .sum();
    let n = view.len();
    Ok(ValueEstimate {
        estimator: EstimatorKind::Snips,
        value,
        se: resid.sqrt() / sum_w,
        n,
        clipped_fraction: clipped as f64 / n as f64,
    })
}

/// Direct method: `(1/n) Σ_i Σ_a π̄(a|x_i) μ̂(a, x_i)`.
///
/// The standard error combines the spread of the per-record terms with the
/// reward model's own estimation error, `Σ_a σ̂_a² ḡ_aᵀ A_a⁻¹ ḡ_a` where
/// `ḡ_a = (1/n) Σ_i π̄(a|x_i) x_i` and `σ̂_a²` is the residual variance of arm
/// `a` on the log (pooled over arms when an arm has too few records).
pub fn direct_method(
    view: &LogView,
    target: &PolicySnapshot,
    reward_model: &LinearRewardModel,
) -> Result<ValueEstimate, OpeError> {
    if view.is_empty() {
        return Err(OpeError::EmptyLog);
    }
    let DmTerms { terms, target_mass } = dm_terms(view, target, reward_model)?;
    let mut est = estimate_from_terms(EstimatorKind::DirectMethod, &terms, 0);
    let model_var = model_variance(view, reward_model, &target_mass)?;
    est.se = est.se.hypot(model_var.sqrt());
    Ok(est)
}

struct DmTerms {
    terms: Vec<f64>,
    /// Per catalog arm, `Σ_i π̄(a|x_i) x_i / n`.
    target_mass: Vec<Vec<f64>>,
}

fn dm_terms(
    view: &LogView,
    target: &PolicySnapshot,
    reward_model: &LinearRewardModel,
) -> Result<DmTerms, OpeError> {
    let mut table = TargetTable::new(view, target);
    let columns = model_columns(view, reward_model);
    let k = view.catalog().arms.len();
    let dim = view.catalog().schema.dim();
    let mut target_mass = vec![vec![0.0; dim]; k];
    let mut terms = Vec::with_capacity(view.len());
    for rec in view.iter() {
        let x = &rec.context.encoded;
        let probs = table.probs(x)?.to_vec();
        let mut acc = 0.0;
        for (arm, p) in probs.iter().enumerate() {
            if *p > 0.0 {
                acc += p * predict(reward_model, &columns, view, arm, x)?;
                for (g, xi) in target_mass[arm].iter_mut().zip(x) {
                    *g += p * xi;
                }
            }
        }
        terms.push(acc);
    }
    let n = view.len() as f64;
    for g in target_mass.iter_mut().flatten() {
        *g /= n;
    }
    Ok(DmTerms { terms, target_mass })
}

fn model_variance(
    view: &LogView,
    reward_model: &LinearRewardModel,
    target_mass: &[Vec<f64>],
) -> Result<f64, OpeError> {
    let columns = model_columns(view, reward_model);
    let k = target_mass.len();
    let dim = view.catalog().schema.dim();
    let mut sse = vec![0.0; k];
    let mut count = vec![0usize; k];
    for rec in view.iter() {
        let resid = rec.reward - predict(reward_model, &columns, view, rec.arm, &rec.context.encoded)?;
        sse[rec.arm] += resid * resid;
        count[rec.arm] += 1;
    }
    let pooled = sse.iter().sum::<f64>() / (view.len().saturating_sub(dim).max(1)) as f64;
    let mut var = 0.0;
    for arm in 0..k {
        if target_mass[arm].iter().all(|g| *g == 0.0) {
            continue;
        }
        let sigma2 = if count[arm] > dim {
            sse[arm] / (count[arm] - dim) as f64
        } else {
            pooled
        };
        let idx = columns[arm].ok_or_else(|| {
            OpeError::ModelMissingArm(view.catalog().arms[arm].arm_id.clone())
        })?;
        var += sigma2 * reward_model.width_index(idx, &target_mass[arm]);
    }
    Ok(var)
}

/// Doubly robust: direct method plus the importance-weighted residual of the
/// logged arm.
pub fn doubly_robust(
    view: &LogView,
    target: &PolicySnapshot,
    reward_model: &LinearRewardModel,
    clip: Option<f64>,
) -> Result<ValueEstimate, OpeError> {
    if view.is_empty() {
        return Err(OpeError::EmptyLog);
    }
    let dm = dm_terms(view, target, reward_model)?.terms;
    let (w, clipped) = weights(view, target, clip)?;
    let columns = model_columns(view, reward_model);
    let mut terms = Vec::with_capacity(view.len());
    for ((rec, dm), w) in view.iter().zip(dm).zip(w) {
        let residual = if w != 0.0 {
            w * (rec.reward - predict(reward_model, &columns, view, rec.arm, &rec.context.encoded)?)
        } else {
            0.0
        };
        terms.push(dm + residual);
    }
    Ok(estimate_from_terms(
        EstimatorKind::DoublyRobust,
        &terms,
        clipped,
    ))
}

/// Dispatches on `kind`. `reward_model` is used by the model-based
/// estimators only.
pub fn estimate(
    kind: EstimatorKind,
    view: &LogView,
    target: &PolicySnapshot,
    reward_model: &LinearRewardModel,
    clip: Option<f64>,
) -> Result<ValueEstimate, OpeError> {
    match kind {
        EstimatorKind::Ips => ips(view, target, clip),
        EstimatorKind::Snips => snips(view, target, clip),
        EstimatorKind::DirectMethod => direct_method(view, target, reward_model),
        EstimatorKind::DoublyRobust => doubly_robust(view, target, reward_model, clip),
        EstimatorKind::OnPolicy => on_policy(view),
    }
}
