//! Frozen policies and their per-context action distributions.
//!
//! A [`PolicySnapshot`] pairs a selection rule with a frozen
//! [`LinearRewardModel`]. Its [`action_probabilities`](PolicySnapshot::action_probabilities)
//! are the exact propensities that a logging run records, so they must be a
//! pure function of the snapshot and the context. Thompson sampling has no
//! closed form; its probabilities are Monte Carlo win counts drawn from an RNG
//! seeded by the snapshot's `mc_seed` and the context bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EngineError, LinearRewardModel};
use crate::context::{validate_arms, Arm};

/// Minimum Monte Carlo draws accepted for Thompson propensities.
pub const MIN_MC_SAMPLES: usize = 100;
pub const DEFAULT_MC_SAMPLES: usize = 10_000;
pub const DEFAULT_P_MIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyRule {
    /// Greedy on predicted means; `epsilon` mass spread uniformly.
    EpsilonGreedy { epsilon: f64 },
    /// Deterministic argmax of the upper confidence bound.
    Ucb { alpha: f64 },
    /// Posterior sampling from `N(θ, σ² A⁻¹)` per arm.
    Thompson {
        mc_samples: usize,
        noise_variance: f64,
    },
    /// Always the given arm.
    Fixed { arm_id: String },
    /// Uniform over the catalog.
    Uniform,
}

impl PolicyRule {
    pub fn validate(&self, arms: &[Arm]) -> Result<(), EngineError> {
        match self {
            PolicyRule::EpsilonGreedy { epsilon } if !(0.0..=1.0).contains(epsilon) => Err(
                EngineError::Config(format!("epsilon must lie in [0, 1], got {epsilon}")),
            ),
            PolicyRule::Ucb { alpha } if !(alpha.is_finite() && *alpha >= 0.0) => Err(
                EngineError::Config(format!("UCB alpha must be >= 0, got {alpha}")),
            ),
            PolicyRule::Thompson { mc_samples, .. } if *mc_samples < MIN_MC_SAMPLES => {
                Err(EngineError::Config(format!(
                    "Thompson mc_samples must be >= {MIN_MC_SAMPLES}, got {mc_samples}"
                )))
            }
            PolicyRule::Thompson { noise_variance, .. }
                if !(noise_variance.is_finite() && *noise_variance > 0.0) =>
            {
                Err(EngineError::Config(format!(
                    "Thompson noise_variance must be positive, got {noise_variance}"
                )))
            }
            PolicyRule::Fixed { arm_id } if !arms.iter().any(|a| &a.arm_id == arm_id) => {
                Err(EngineError::UnknownArm(arm_id.clone()))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyRule::EpsilonGreedy { .. } => "epsilon_greedy",
            PolicyRule::Ucb { .. } => "ucb",
            PolicyRule::Thompson { .. } => "thompson",
            PolicyRule::Fixed { .. } => "fixed",
            PolicyRule::Uniform => "uniform",
        }
    }
}

/// Immutable policy: rule + frozen reward model + catalog.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SnapshotWire", into = "SnapshotWire")]
pub struct PolicySnapshot {
    rule: PolicyRule,
    model: LinearRewardModel,
    arms: Vec<Arm>,
    p_min: f64,
    mc_seed: u64,
    masked_dims: Vec<usize>,
    excluded_arms: Vec<usize>,
}

impl PolicySnapshot {
    pub fn new(
        rule: PolicyRule,
        model: LinearRewardModel,
        arms: Vec<Arm>,
        p_min: f64,
        mc_seed: u64,
    ) -> Result<Self, EngineError> {
        let snapshot = Self {
            rule,
            model,
            arms,
            p_min,
            mc_seed,
            masked_dims: Vec::new(),
            excluded_arms: Vec::new(),
        };
        snapshot.validate()?;
        Ok(snapshot)
    }

    fn validate(&self) -> Result<(), EngineError> {
        validate_arms(&self.arms).map_err(|e| EngineError::Config(e.to_string()))?;
        let ids_match = self.arms.len() == self.model.arm_count()
            && self
                .arms
                .iter()
                .zip(self.model.arm_ids())
                .all(|(a, id)| &a.arm_id == id);
        if !ids_match {
            return Err(EngineError::Config(
                "reward model arms do not match the policy catalog".into(),
            ));
        }
        self.rule.validate(&self.arms)?;
        let k = self.arms.len() as f64;
        if !(self.p_min.is_finite() && self.p_min >= 0.0 && self.p_min * k <= 1.0 + 1e-12) {
            return Err(EngineError::Config(format!(
                "probability floor {} is infeasible for {} arms",
                self.p_min,
                self.arms.len()
            )));
        }
        if let Some(&d) = self.masked_dims.iter().find(|&&d| d >= self.model.dim()) {
            return Err(EngineError::Config(format!(
                "masked dimension {d} out of range"
            )));
        }
        if self.excluded_arms.len() >= self.arms.len() {
            return Err(EngineError::NoSurvivingArms);
        }
        Ok(())
    }

    pub fn rule(&self) -> &PolicyRule {
        &self.rule
    }

    pub fn model(&self) -> &LinearRewardModel {
        &self.model
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn mc_seed(&self) -> u64 {
        self.mc_seed
    }

    pub fn masked_dims(&self) -> &[usize] {
        &self.masked_dims
    }

    /// Ids of arms whose probability is forced to zero.
    pub fn excluded_arm_ids(&self) -> Vec<&str> {
        self.excluded_arms
            .iter()
            .map(|&i| self.arms[i].arm_id.as_str())
            .collect()
    }

    pub fn arm_index(&self, arm_id: &str) -> Option<usize> {
        self.arms.iter().position(|a| a.arm_id == arm_id)
    }

    pub fn baseline_index(&self) -> usize {
        self.arms
            .iter()
            .position(|a| a.is_baseline)
            .expect("validated catalog has a baseline")
    }

    /// Same snapshot with a different Monte Carlo seed.
    pub fn with_mc_seed(mut self, mc_seed: u64) -> Self {
        self.mc_seed = mc_seed;
        self
    }

    /// Replaces the rule and probability floor, keeping model and catalog.
    pub fn with_rule(mut self, rule: PolicyRule, p_min: f64) -> Result<Self, EngineError> {
        self.rule = rule;
        self.p_min = p_min;
        self.validate()?;
        Ok(self)
    }

    /// Replaces the reward model; the new model sees contexts with
    /// `masked_dims` zeroed.
    pub fn with_model(
        mut self,
        model: LinearRewardModel,
        masked_dims: Vec<usize>,
    ) -> Result<Self, EngineError> {
        self.model = model;
        self.masked_dims = masked_dims;
        self.masked_dims.sort_unstable();
        self.masked_dims.dedup();
        self.validate()?;
        Ok(self)
    }

    /// Forces zero probability on `arm_id`; the remaining mass is
    /// renormalized per context.
    pub fn without_arm(mut self, arm_id: &str) -> Result<Self, EngineError> {
        let idx = self
            .arm_index(arm_id)
            .ok_or_else(|| EngineError::UnknownArm(arm_id.to_string()))?;
        if !self.excluded_arms.contains(&idx) {
            self.excluded_arms.push(idx);
            self.excluded_arms.sort_unstable();
        }
        self.validate()?;
        Ok(self)
    }

    /// Online update of the underlying model with one observed reward. Used
    /// by the simulator's learning logger; published snapshots are never
    /// mutated.
    pub fn observe(&mut self, arm: usize, x: &[f64], reward: f64) -> Result<(), EngineError> {
        let view = self.model_view(x).into_owned();
        self.model.update_index(arm, &view, reward)
    }

    /// Context as seen by the model (masked components zeroed).
    pub fn model_view<'a>(&self, x: &'a [f64]) -> std::borrow::Cow<'a, [f64]> {
        if self.masked_dims.is_empty() {
            std::borrow::Cow::Borrowed(x)
        } else {
            let mut owned = x.to_vec();
            for &d in &self.masked_dims {
                owned[d] = 0.0;
            }
            std::borrow::Cow::Owned(owned)
        }
    }

    /// Predicted mean reward per arm for `x`.
    pub fn predicted_means(&self, x: &[f64]) -> Result<Vec<f64>, EngineError> {
        self.check_dim(x)?;
        let xv = self.model_view(x);
        Ok((0..self.arms.len())
            .map(|a| self.model.predict_index(a, &xv))
            .collect())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), EngineError> {
        if x.len() != self.model.dim() {
            return Err(EngineError::DimensionMismatch {
                expected: self.model.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Probability of each catalog arm for context `x`; sums to 1.
    pub fn action_probabilities(&self, x: &[f64]) -> Result<Vec<f64>, EngineError> {
        self.check_dim(x)?;
        let xv = self.model_view(x);
        let k = self.arms.len();
        let mut probs = match &self.rule {
            PolicyRule::EpsilonGreedy { epsilon } => {
                let means: Vec<f64> = (0..k).map(|a| self.model.predict_index(a, &xv)).collect();
                let best = argmax(&means, &self.arms);
                let mut p = vec![epsilon / k as f64; k];
                p[best] += 1.0 - epsilon;
                p
            }
            PolicyRule::Ucb { alpha } => {
                let scores: Vec<f64> = (0..k)
                    .map(|a| self.model.ucb_score_index(a, &xv, *alpha))
                    .collect();
                one_hot(k, argmax(&scores, &self.arms))
            }
            PolicyRule::Thompson {
                mc_samples,
                noise_variance,
            } => self.thompson_probabilities(&xv, *mc_samples, *noise_variance),
            PolicyRule::Fixed { arm_id } => {
                one_hot(k, self.arm_index(arm_id).expect("validated fixed arm"))
            }
            PolicyRule::Uniform => vec![1.0 / k as f64; k],
        };
        apply_floor(&mut probs, self.p_min);
        if !self.excluded_arms.is_empty() {
            for &i in &self.excluded_arms {
                probs[i] = 0.0;
            }
            let total: f64 = probs.iter().sum();
            if total <= 0.0 {
                return Err(EngineError::NoSurvivingSupport);
            }
            for p in &mut probs {
                *p /= total;
            }
        }
        Ok(probs)
    }

    /// Monte Carlo win frequencies of each arm's posterior draw.
    ///
    /// The draw of `θ̃ ~ N(θ, σ² A⁻¹)` only enters the decision through
    /// `θ̃ᵀx ~ N(θᵀx, σ² xᵀA⁻¹x)`, so the scalar projection is sampled
    /// directly.
    fn thompson_probabilities(
        &self,
        x: &[f64],
        mc_samples: usize,
        noise_variance: f64,
    ) -> Vec<f64> {
        let k = self.arms.len();
        let means: Vec<f64> = (0..k).map(|a| self.model.predict_index(a, x)).collect();
        let sds: Vec<f64> = (0..k)
            .map(|a| (noise_variance * self.model.width_index(a, x)).sqrt())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(context_seed(self.mc_seed, x));
        let mut wins = vec![0u64; k];
        let mut draws = vec![0.0; k];
        for _ in 0..mc_samples {
            for a in 0..k {
                let z: f64 = rng.sample(StandardNormal);
                draws[a] = means[a] + sds[a] * z;
            }
            wins[argmax(&draws, &self.arms)] += 1;
        }
        wins.iter().map(|&w| w as f64 / mc_samples as f64).collect()
    }

    /// Samples an arm index from `action_probabilities(x)`, returning it with
    /// its exact propensity.
    pub fn sample_arm<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        rng: &mut R,
    ) -> Result<(usize, f64), EngineError> {
        let probs = self.action_probabilities(x)?;
        let idx = sample_index(&probs, rng);
        Ok((idx, probs[idx]))
    }

    /// Seeded convenience wrapper returning `(arm_id, propensity)`.
    pub fn choose_arm(&self, x: &[f64], seed: u64) -> Result<(String, f64), EngineError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (idx, p) = self.sample_arm(x, &mut rng)?;
        Ok((self.arms[idx].arm_id.clone(), p))
    }
}

/// Draws an index from a probability vector by inverse CDF; never returns a
/// zero-probability index.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_positive = i;
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Index of the largest score; ties go to the lexicographically smallest
/// arm id.
pub fn argmax(scores: &[f64], arms: &[Arm]) -> usize {
    let mut best = 0;
    for i in 1..scores.len() {
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best] && arms[i].arm_id < arms[best].arm_id);
        if better {
            best = i;
        }
    }
    best
}

fn one_hot(k: usize, hot: usize) -> Vec<f64> {
    let mut p = vec![0.0; k];
    p[hot] = 1.0;
    p
}

/// Raises every entry to at least `floor` and rescales the rest so the vector
/// still sums to one. Entries already at or above the floor keep their
/// relative proportions; a vector that satisfies the floor is only
/// renormalized.
pub fn apply_floor(probs: &mut [f64], floor: f64) {
    if floor <= 0.0 || probs.is_empty() {
        return;
    }
    let k = probs.len();
    let mut pinned = vec![false; k];
    loop {
        let n_pinned = pinned.iter().filter(|&&p| p).count();
        let budget = 1.0 - n_pinned as f64 * floor;
        let free_mass: f64 = probs
            .iter()
            .zip(&pinned)
            .filter(|(_, &p)| !p)
            .map(|(v, _)| *v)
            .sum();
        if free_mass <= 0.0 {
            // Everything left is zero: spread the budget evenly.
            let free = k - n_pinned;
            for (v, &p) in probs.iter_mut().zip(&pinned) {
                *v = if p { floor } else { budget / free as f64 };
            }
            return;
        }
        let scale = budget / free_mass;
        let mut changed = false;
        for (v, p) in probs.iter().zip(pinned.iter_mut()) {
            if !*p && v * scale < floor {
                *p = true;
                changed = true;
            }
        }
        if !changed {
            for (v, &p) in probs.iter_mut().zip(&pinned) {
                *v = if p { floor } else { *v * scale };
            }
            return;
        }
    }
}

/// Stable 64-bit seed derived from a base seed and the context bits.
fn context_seed(base: u64, x: &[f64]) -> u64 {
    let mut h = splitmix64(base);
    for v in x {
        h = splitmix64(h ^ v.to_bits());
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ── Serialized form ─────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotWire {
    rule: PolicyRule,
    p_min: f64,
    mc_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    masked_dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    excluded_arms: Vec<String>,
    arms: Vec<Arm>,
    model: LinearRewardModel,
}

impl From<PolicySnapshot> for SnapshotWire {
    fn from(s: PolicySnapshot) -> Self {
        let excluded_arms = s
            .excluded_arms
            .iter()
            .map(|&i| s.arms[i].arm_id.clone())
            .collect();
        SnapshotWire {
            rule: s.rule,
            p_min: s.p_min,
            mc_seed: s.mc_seed,
            masked_dims: s.masked_dims,
            excluded_arms,
            arms: s.arms,
            model: s.model,
        }
    }
}

impl TryFrom<SnapshotWire> for PolicySnapshot {
    type Error = EngineError;

    fn try_from(w: SnapshotWire) -> Result<Self, EngineError> {
        let mut snapshot = PolicySnapshot::new(w.rule, w.model, w.arms, w.p_min, w.mc_seed)?;
        snapshot.masked_dims = w.masked_dims;
        for id in &w.excluded_arms {
            snapshot = snapshot.without_arm(id)?;
        }
        snapshot.validate()?;
        Ok(snapshot)
    }
}
