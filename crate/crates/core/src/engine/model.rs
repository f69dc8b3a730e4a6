//! Per-arm ridge regression over encoded contexts.
//!
//! Each arm keeps the sufficient statistics `A = λI + Σ x xᵀ` and
//! `b = Σ r x`. The weights `θ = A⁻¹ b` and `A⁻¹` itself are derived from
//! `(A, b)` after every update and never stored on disk.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::EngineError;

#[derive(Debug, Clone)]
struct ArmStats {
    a: DMatrix<f64>,
    b: DVector<f64>,
    a_inv: DMatrix<f64>,
    theta: DVector<f64>,
    updates: u64,
}

impl ArmStats {
    fn prior(dim: usize, lambda: f64) -> Self {
        Self::from_parts(DMatrix::identity(dim, dim) * lambda, DVector::zeros(dim), 0)
            .expect("λI is positive definite")
    }

    fn from_parts(a: DMatrix<f64>, b: DVector<f64>, updates: u64) -> Option<Self> {
        let chol = Cholesky::<f64, Dyn>::new(a.clone())?;
        let theta = chol.solve(&b);
        let a_inv = chol.inverse();
        Some(Self {
            a,
            b,
            a_inv,
            theta,
            updates,
        })
    }

    fn refresh(&mut self) -> Result<(), EngineError> {
        let chol =
            Cholesky::<f64, Dyn>::new(self.a.clone()).ok_or(EngineError::NotPositiveDefinite)?;
        self.theta = chol.solve(&self.b);
        self.a_inv = chol.inverse();
        Ok(())
    }
}

/// Linear reward model with one ridge regression per arm.
///
/// Arms are addressed by their catalog index; [`LinearRewardModel::arm_index`]
/// maps ids to indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelWire", into = "ModelWire")]
pub struct LinearRewardModel {
    dim: usize,
    lambda: f64,
    arm_ids: Vec<String>,
    arms: Vec<ArmStats>,
}

impl LinearRewardModel {
    pub fn new(arm_ids: Vec<String>, dim: usize, lambda: f64) -> Result<Self, EngineError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(EngineError::Config(format!(
                "ridge lambda must be positive and finite, got {lambda}"
            )));
        }
        if dim == 0 {
            return Err(EngineError::Config("context dimension must be >= 1".into()));
        }
        let arms = arm_ids
            .iter()
            .map(|_| ArmStats::prior(dim, lambda))
            .collect();
        Ok(Self {
            dim,
            lambda,
            arm_ids,
            arms,
        })
    }

    /// Builds a model directly from per-arm sufficient statistics.
    ///
    /// `a` is row-major `dim × dim`. Fails when any `A` is not positive
    /// definite.
    pub fn from_sufficient_stats(
        arm_ids: Vec<String>,
        lambda: f64,
        stats: Vec<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Self, EngineError> {
        if arm_ids.len() != stats.len() {
            return Err(EngineError::Config(format!(
                "{} arm ids but {} stat blocks",
                arm_ids.len(),
                stats.len()
            )));
        }
        let dim = stats.first().map(|(_, b)| b.len()).unwrap_or(0);
        let mut model = Self::new(arm_ids, dim, lambda)?;
        for (slot, (a, b)) in model.arms.iter_mut().zip(stats) {
            if a.len() != dim * dim || b.len() != dim {
                return Err(EngineError::DimensionMismatch {
                    expected: dim,
                    got: b.len(),
                });
            }
            let a = DMatrix::from_row_slice(dim, dim, &a);
            if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
                return Err(EngineError::NotPositiveDefinite);
            }
            *slot = ArmStats::from_parts(a, DVector::from_vec(b), 0)
                .ok_or(EngineError::NotPositiveDefinite)?;
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn arm_ids(&self) -> &[String] {
        &self.arm_ids
    }

    pub fn arm_count(&self) -> usize {
        self.arm_ids.len()
    }

    pub fn arm_index(&self, arm_id: &str) -> Option<usize> {
        self.arm_ids.iter().position(|a| a == arm_id)
    }

    fn index(&self, arm_id: &str) -> Result<usize, EngineError> {
        self.arm_index(arm_id)
            .ok_or_else(|| EngineError::UnknownArm(arm_id.to_string()))
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), EngineError> {
        if x.len() != self.dim {
            return Err(EngineError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Rank-one update `A += x xᵀ`, `b += r x` for a single arm.
    pub fn update_index(&mut self, arm: usize, x: &[f64], reward: f64) -> Result<(), EngineError> {
        self.check_dim(x)?;
        if !reward.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite);
        }
        let stats = &mut self.arms[arm];
        let xv = DVector::from_column_slice(x);
        stats.a.ger(1.0, &xv, &xv, 1.0);
        stats.b.axpy(reward, &xv, 1.0);
        stats.updates += 1;
        stats.refresh()
    }

    pub fn fit_update(&mut self, arm_id: &str, x: &[f64], reward: f64) -> Result<(), EngineError> {
        let arm = self.index(arm_id)?;
        self.update_index(arm, x, reward)
    }

    /// Accumulates a batch of `(arm, x, r)` observations, refactoring each
    /// touched arm once.
    pub fn fit_batch<'a, I>(&mut self, updates: I) -> Result<(), EngineError>
    where
        I: IntoIterator<Item = (usize, &'a [f64], f64)>,
    {
        let mut touched = vec![false; self.arms.len()];
        for (arm, x, reward) in updates {
            self.check_dim(x)?;
            if !reward.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(EngineError::NonFinite);
            }
            let stats = self
                .arms
                .get_mut(arm)
                .ok_or_else(|| EngineError::UnknownArm(format!("#{arm}")))?;
            let xv = DVector::from_column_slice(x);
            stats.a.ger(1.0, &xv, &xv, 1.0);
            stats.b.axpy(reward, &xv, 1.0);
            stats.updates += 1;
            touched[arm] = true;
        }
        for (stats, touched) in self.arms.iter_mut().zip(touched) {
            if touched {
                stats.refresh()?;
            }
        }
        Ok(())
    }

    /// `θ_armᵀ x`.
    pub fn predict_index(&self, arm: usize, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.arms[arm].theta.iter().zip(x).map(|(t, v)| t * v).sum()
    }

    pub fn predict_mean(&self, arm_id: &str, x: &[f64]) -> Result<f64, EngineError> {
        let arm = self.index(arm_id)?;
        self.check_dim(x)?;
        Ok(self.predict_index(arm, x))
    }

    /// Confidence width term `xᵀ A⁻¹ x`.
    pub fn width_index(&self, arm: usize, x: &[f64]) -> f64 {
        let a_inv = &self.arms[arm].a_inv;
        let mut acc = 0.0;
        for i in 0..self.dim {
            let mut row = 0.0;
            for j in 0..self.dim {
                row += a_inv[(i, j)] * x[j];
            }
            acc += x[i] * row;
        }
        acc.max(0.0)
    }

    pub fn width(&self, arm_id: &str, x: &[f64]) -> Result<f64, EngineError> {
        let arm = self.index(arm_id)?;
        self.check_dim(x)?;
        Ok(self.width_index(arm, x))
    }

    pub fn ucb_score_index(&self, arm: usize, x: &[f64], alpha: f64) -> f64 {
        self.predict_index(arm, x) + alpha * self.width_index(arm, x).sqrt()
    }

    /// `θᵀx + α·sqrt(xᵀ A⁻¹ x)`.
    pub fn ucb_score(&self, arm_id: &str, x: &[f64], alpha: f64) -> Result<f64, EngineError> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(EngineError::Config(format!(
                "UCB alpha must be >= 0, got {alpha}"
            )));
        }
        let arm = self.index(arm_id)?;
        self.check_dim(x)?;
        Ok(self.ucb_score_index(arm, x, alpha))
    }

    pub fn theta(&self, arm_id: &str) -> Result<Vec<f64>, EngineError> {
        Ok(self.arms[self.index(arm_id)?]
            .theta
            .iter()
            .copied()
            .collect())
    }

    /// Row-major `A` for one arm.
    pub fn design_matrix(&self, arm_id: &str) -> Result<Vec<f64>, EngineError> {
        let a = &self.arms[self.index(arm_id)?].a;
        Ok(row_major(a))
    }

    pub fn response(&self, arm_id: &str) -> Result<Vec<f64>, EngineError> {
        Ok(self.arms[self.index(arm_id)?].b.iter().copied().collect())
    }

    pub fn update_count(&self, arm: usize) -> u64 {
        self.arms[arm].updates
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

// ── Serialized form ─────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelWire {
    dim: usize,
    lambda: f64,
    arms: Vec<ArmWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmWire {
    arm_id: String,
    updates: u64,
    /// Row-major `dim × dim` design matrix.
    a: Vec<f64>,
    b: Vec<f64>,
}

impl From<LinearRewardModel> for ModelWire {
    fn from(m: LinearRewardModel) -> Self {
        let arms = m
            .arm_ids
            .iter()
            .zip(&m.arms)
            .map(|(id, s)| ArmWire {
                arm_id: id.clone(),
                updates: s.updates,
                a: row_major(&s.a),
                b: s.b.iter().copied().collect(),
            })
            .collect();
        ModelWire {
            dim: m.dim,
            lambda: m.lambda,
            arms,
        }
    }
}

impl TryFrom<ModelWire> for LinearRewardModel {
    type Error = EngineError;

    fn try_from(w: ModelWire) -> Result<Self, EngineError> {
        let ids = w.arms.iter().map(|a| a.arm_id.clone()).collect();
        let mut model = LinearRewardModel::new(ids, w.dim, w.lambda)?;
        for (slot, arm) in model.arms.iter_mut().zip(w.arms) {
            if arm.a.len() != w.dim * w.dim || arm.b.len() != w.dim {
                return Err(EngineError::DimensionMismatch {
                    expected: w.dim,
                    got: arm.b.len(),
                });
            }
            let a = DMatrix::from_row_slice(w.dim, w.dim, &arm.a);
            *slot = ArmStats::from_parts(a, DVector::from_vec(arm.b), arm.updates)
                .ok_or(EngineError::NotPositiveDefinite)?;
        }
        Ok(model)
    }
}
