//! Builtin parametric families of dynamics and stage rewards.

use crate::model::{Dynamics, StageReward};
use nalgebra::{DMatrix, DVector};

/// One stage map `f_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum StageMap {
    /// `x ↦ A x + B u`.
    Linear { a: DMatrix<f64>, b: DMatrix<f64> },
    /// Scalar concave growth `x ↦ x^α − u`.
    PowerGrowth { alpha: f64 },
    /// `x ↦ A x + w (uᵀu)`; the control enters only at second order.
    QuadraticInput { a: DMatrix<f64>, w: DVector<f64> },
}

impl StageMap {
    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match self {
            StageMap::Linear { a, b } => a * x + b * u,
            StageMap::PowerGrowth { alpha } => DVector::from_element(1, x[0].powf(*alpha) - u[0]),
            StageMap::QuadraticInput { a, w } => a * x + w * u.dot(u),
        }
    }

    pub fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        match self {
            StageMap::Linear { a, b } => (a.clone(), b.clone()),
            StageMap::PowerGrowth { alpha } => (
                DMatrix::from_element(1, 1, alpha * x[0].powf(alpha - 1.0)),
                DMatrix::from_element(1, 1, -1.0),
            ),
            StageMap::QuadraticInput { a, w } => (a.clone(), w * (u.transpose() * 2.0)),
        }
    }
}

/// Stage maps listed for the first stages, then a repeating tail.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledDynamics {
    pub stages: Vec<StageMap>,
    pub tail: StageMap,
}

impl ScheduledDynamics {
    pub fn stationary(map: StageMap) -> Self {
        Self { stages: Vec::new(), tail: map }
    }

    pub fn at(&self, t: usize) -> &StageMap {
        self.stages.get(t).unwrap_or(&self.tail)
    }

    pub fn is_linear(&self) -> bool {
        self.stages.iter().chain(std::iter::once(&self.tail)).all(|m| matches!(m, StageMap::Linear { .. }))
    }
}

impl Dynamics for ScheduledDynamics {
    fn eval(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.at(t).eval(x, u)
    }

    fn jacobians(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some(self.at(t).jacobians(x, u))
    }
}

/// Undiscounted stage reward.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardMap {
    Zero,
    Constant { value: f64 },
    /// `−½ (xᵀQx + uᵀRu)`.
    Quadratic { q: DMatrix<f64>, r: DMatrix<f64> },
    /// `c·x + d·u + offset`.
    Linear { c: DVector<f64>, d: DVector<f64>, offset: f64 },
    /// `Σ ln u_i`.
    LogControl,
}

impl RewardMap {
    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        match self {
            RewardMap::Zero => 0.0,
            RewardMap::Constant { value } => *value,
            RewardMap::Quadratic { q, r } => -0.5 * ((x.transpose() * q * x)[0] + (u.transpose() * r * u)[0]),
            RewardMap::Linear { c, d, offset } => c.dot(x) + d.dot(u) + offset,
            RewardMap::LogControl => u.iter().map(|v| v.ln()).sum(),
        }
    }

    pub fn gradients(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        match self {
            RewardMap::Zero | RewardMap::Constant { .. } => (DVector::zeros(x.len()), DVector::zeros(u.len())),
            RewardMap::Quadratic { q, r } => (-(q + q.transpose()) * x * 0.5, -(r + r.transpose()) * u * 0.5),
            RewardMap::Linear { c, d, .. } => (c.clone(), d.clone()),
            RewardMap::LogControl => (DVector::zeros(x.len()), u.map(|v| 1.0 / v)),
        }
    }
}

/// `φ_t = discount^t · base(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedReward {
    pub base: RewardMap,
    pub discount: f64,
}

impl DiscountedReward {
    fn weight(&self, t: usize) -> f64 {
        if self.discount == 1.0 {
            1.0
        } else {
            self.discount.powi(t as i32)
        }
    }
}

impl StageReward for DiscountedReward {
    fn eval(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.weight(t) * self.base.eval(x, u)
    }

    fn gradients(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let w = self.weight(t);
        let (c, d) = self.base.gradients(x, u);
        Some((c * w, d * w))
    }
}
