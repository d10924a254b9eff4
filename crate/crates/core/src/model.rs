//! Controlled dynamical systems, processes and objective evaluation.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, all_finite_matrix};
use crate::sets::ConvexSet;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

/// `t ↦ f_t(x, u)` with optional analytic Jacobians `(D₁f_t, D₂f_t)`.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn eval(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    fn jacobians(&self, _t: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }
}

/// `t ↦ φ_t(x, u)` with optional analytic gradients `(D₁φ_t, D₂φ_t)`.
pub trait StageReward: Send + Sync + fmt::Debug {
    fn eval(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64;

    fn gradients(&self, _t: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        None
    }
}

type DynFn = dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type RewardFn = dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;

/// Dynamics given by a closure; derivatives come from finite differences.
pub struct FnDynamics(pub Box<DynFn>);

impl fmt::Debug for FnDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnDynamics")
    }
}

impl Dynamics for FnDynamics {
    fn eval(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.0)(t, x, u)
    }
}

/// Stage reward given by a closure.
pub struct FnReward(pub Box<RewardFn>);

impl fmt::Debug for FnReward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnReward")
    }
}

impl StageReward for FnReward {
    fn eval(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (self.0)(t, x, u)
    }
}

/// Values for the first stages followed by a repeating tail value.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T> {
    pub stages: Vec<T>,
    pub tail: T,
}

impl<T> Schedule<T> {
    pub fn constant(value: T) -> Self {
        Self { stages: Vec::new(), tail: value }
    }

    pub fn at(&self, t: usize) -> &T {
        self.stages.get(t).unwrap_or(&self.tail)
    }

    pub fn iter_defined(&self) -> impl Iterator<Item = &T> {
        self.stages.iter().chain(std::iter::once(&self.tail))
    }
}

/// Open state domain `X_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum StateDomain {
    AllSpace,
    /// Open box `lower < x < upper`; bounds may be infinite.
    OpenBox { lower: DVector<f64>, upper: DVector<f64> },
}

impl StateDomain {
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        match self {
            StateDomain::AllSpace => x.iter().all(|v| v.is_finite()),
            StateDomain::OpenBox { lower, upper } => {
                x.len() == lower.len() && (0..x.len()).all(|i| x[i].is_finite() && lower[i] < x[i] && x[i] < upper[i])
            }
        }
    }
}

/// The horizon-indexed family `(f_t, φ_t, X_t, U_t)`.
#[derive(Debug, Clone)]
pub struct ControlSystem {
    state_dim: usize,
    control_dim: usize,
    dynamics: Arc<dyn Dynamics>,
    reward: Arc<dyn StageReward>,
    state_domains: Schedule<StateDomain>,
    control_sets: Schedule<ConvexSet>,
}

impl ControlSystem {
    /// A system with unconstrained states and controls.
    pub fn new(state_dim: usize, control_dim: usize, dynamics: Arc<dyn Dynamics>, reward: Arc<dyn StageReward>) -> Result<Self> {
        if state_dim == 0 || control_dim == 0 {
            return Err(Error::Dimension("state and control dimensions must be positive".into()));
        }
        Ok(Self {
            state_dim,
            control_dim,
            dynamics,
            reward,
            state_domains: Schedule::constant(StateDomain::AllSpace),
            control_sets: Schedule::constant(ConvexSet::AllSpace { dim: control_dim }),
        })
    }

    pub fn with_control_sets(mut self, sets: Schedule<ConvexSet>) -> Result<Self> {
        if sets.iter_defined().any(|s| s.dim() != self.control_dim) {
            return Err(Error::Dimension("control set dimension differs from control_dim".into()));
        }
        self.control_sets = sets;
        Ok(self)
    }

    pub fn with_state_domains(mut self, domains: Schedule<StateDomain>) -> Result<Self> {
        let bad = domains.iter_defined().any(|d| match d {
            StateDomain::AllSpace => false,
            StateDomain::OpenBox { lower, upper } => lower.len() != self.state_dim || upper.len() != self.state_dim,
        });
        if bad {
            return Err(Error::Dimension("state domain dimension differs from state_dim".into()));
        }
        self.state_domains = domains;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn control_set(&self, t: usize) -> &ConvexSet {
        self.control_sets.at(t)
    }

    pub fn state_domain(&self, t: usize) -> &StateDomain {
        self.state_domains.at(t)
    }

    pub fn control_sets(&self) -> &Schedule<ConvexSet> {
        &self.control_sets
    }

    pub fn state_domains(&self) -> &Schedule<StateDomain> {
        &self.state_domains
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    pub fn step(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.dynamics.eval(t, x, u)
    }

    pub fn reward(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.reward.eval(t, x, u)
    }

    pub fn reward_model(&self) -> &dyn StageReward {
        self.reward.as_ref()
    }
}

/// Paired state/control sequences from an initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Process {
    pub initial_state: DVector<f64>,
    /// `x_0 .. x_N` (one more entry than `controls`).
    pub states: Vec<DVector<f64>>,
    /// `u_0 .. u_{N-1}`.
    pub controls: Vec<DVector<f64>>,
}

impl Process {
    pub fn from_parts(states: Vec<DVector<f64>>, controls: Vec<DVector<f64>>) -> Result<Self> {
        if states.len() != controls.len() + 1 {
            return Err(Error::Dimension(format!(
                "{} states for {} controls; expected one more state than controls",
                states.len(),
                controls.len()
            )));
        }
        Ok(Self {
            initial_state: states[0].clone(),
            states,
            controls,
        })
    }

    /// Number of materialized stages (controls).
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// Largest `‖x_{t+1} − f_t(x_t, u_t)‖` for `t < stages`.
    pub fn dynamics_residual(&self, system: &ControlSystem, stages: usize) -> Result<(usize, f64)> {
        self.require(stages)?;
        let mut worst = (0, 0.0);
        for t in 0..stages {
            let r = (&self.states[t + 1] - system.step(t, &self.states[t], &self.controls[t])).norm();
            if r > worst.1 || r.is_nan() {
                worst = (t, r);
            }
        }
        Ok(worst)
    }

    pub(crate) fn require(&self, stages: usize) -> Result<()> {
        if stages > self.controls.len() {
            return Err(Error::ProcessTooShort {
                needed: stages,
                available: self.controls.len(),
            });
        }
        Ok(())
    }
}

/// Runs the recursion `x_{t+1} = f_t(x_t, u_t)` for stages `0..=horizon`.
pub fn simulate(system: &ControlSystem, initial_state: &DVector<f64>, controls: &[DVector<f64>], horizon: usize) -> Result<Process> {
    if controls.len() < horizon + 1 {
        return Err(Error::ProcessTooShort {
            needed: horizon + 1,
            available: controls.len(),
        });
    }
    if initial_state.len() != system.state_dim() {
        return Err(Error::Dimension("initial state".into()));
    }
    let mut states = Vec::with_capacity(horizon + 2);
    states.push(initial_state.clone());
    for (t, u) in controls.iter().take(horizon + 1).enumerate() {
        let x = &states[t];
        if !system.state_domain(t).contains(x) {
            return Err(Error::DomainViolation { t, state: x.iter().cloned().collect() });
        }
        if u.len() != system.control_dim() {
            return Err(Error::Dimension(format!("control at stage {t}")));
        }
        let set = system.control_set(t);
        if !set.contains(u) {
            return Err(Error::InfeasibleControl {
                t,
                control: u.iter().cloned().collect(),
                violation: set.violation(u),
            });
        }
        let next = system.step(t, x, u);
        if next.len() != system.state_dim() {
            return Err(Error::Dimension(format!("dynamics output at stage {t}")));
        }
        states.push(next);
    }
    let last = horizon + 1;
    if !system.state_domain(last).contains(&states[last]) {
        return Err(Error::DomainViolation {
            t: last,
            state: states[last].iter().cloned().collect(),
        });
    }
    Ok(Process {
        initial_state: initial_state.clone(),
        states,
        controls: controls[..=horizon].to_vec(),
    })
}

/// Trailing-window length for the Cauchy tail test.
pub const CAUCHY_WINDOW: usize = 10;
/// Tail variation below which a series counts as convergent.
pub const CAUCHY_TOL: f64 = 1e-9;

/// Partial sums `S_h = Σ_{t≤h} φ_t` and a Cauchy-tail verdict.
#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveReport {
    pub partial_sums: Vec<f64>,
    pub tail_variation: f64,
    pub convergent: bool,
}

pub fn evaluate_objective(system: &ControlSystem, process: &Process, horizon_cap: usize) -> Result<ObjectiveReport> {
    process.require(horizon_cap + 1)?;
    let mut sums = Vec::with_capacity(horizon_cap + 1);
    let mut acc = 0.0;
    for t in 0..=horizon_cap {
        let phi = system.reward(t, &process.states[t], &process.controls[t]);
        if !phi.is_finite() {
            return Err(Error::NonFinite(format!("reward at stage {t}")));
        }
        acc += phi;
        sums.push(acc);
    }
    let window = &sums[sums.len().saturating_sub(CAUCHY_WINDOW)..];
    let hi = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = window.iter().cloned().fold(f64::INFINITY, f64::min);
    let tail_variation = hi - lo;
    Ok(ObjectiveReport {
        partial_sums: sums,
        tail_variation,
        convergent: tail_variation < CAUCHY_TOL,
    })
}

/// Running differences `Δ_h = Σ_{t≤h} (φ_t(candidate) − φ_t(challenger))`.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub deltas: Vec<f64>,
    /// First index of the trailing window (last quarter of the materialized range).
    pub window_start: usize,
    pub limsup_estimate: f64,
    pub liminf_estimate: f64,
    /// Candidate is at least as good in the limsup sense.
    pub dominates_limsup: bool,
    /// Candidate is at least as good in the liminf sense.
    pub dominates_liminf: bool,
}

pub fn compare_processes(
    system: &ControlSystem,
    candidate: &Process,
    challenger: &Process,
    horizon_cap: usize,
    tolerance: f64,
) -> Result<ComparisonReport> {
    if (&candidate.initial_state - &challenger.initial_state).amax() > 0.0 {
        return Err(Error::InitialStateMismatch);
    }
    candidate.require(horizon_cap + 1)?;
    challenger.require(horizon_cap + 1)?;
    let mut deltas = Vec::with_capacity(horizon_cap + 1);
    let mut acc = 0.0;
    for t in 0..=horizon_cap {
        acc += system.reward(t, &candidate.states[t], &candidate.controls[t])
            - system.reward(t, &challenger.states[t], &challenger.controls[t]);
        deltas.push(acc);
    }
    let n = deltas.len();
    let window_start = n - (n / 4).max(1);
    let tail = &deltas[window_start..];
    let limsup = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let liminf = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ComparisonReport {
        deltas,
        window_start,
        limsup_estimate: limsup,
        liminf_estimate: liminf,
        dominates_limsup: limsup >= -tolerance,
        dominates_liminf: liminf >= -tolerance,
    })
}

/// Derivatives of `f_t` and `φ_t` at a process point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedStage {
    pub t: usize,
    /// `D₁f_t`, state_dim × state_dim.
    pub a: DMatrix<f64>,
    /// `D₂f_t`, state_dim × control_dim.
    pub b: DMatrix<f64>,
    /// `D₁φ_t` as a column vector.
    pub c: DVector<f64>,
    /// `D₂φ_t` as a column vector.
    pub d: DVector<f64>,
}

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Differentiation {
    /// Analytic derivatives supplied by the dynamics and reward.
    Supplied,
    CentralDifference { step: f64 },
    /// Supplied derivatives where available, otherwise central differences with the default step.
    Preferred,
}

pub fn linearize(system: &ControlSystem, process: &Process, t: usize, method: Differentiation) -> Result<LinearizedStage> {
    process.require(t + 1)?;
    let x = &process.states[t];
    let u = &process.controls[t];
    if !system.state_domain(t).contains(x) {
        return Err(Error::DomainViolation { t, state: x.iter().cloned().collect() });
    }
    let supplied_f = || system.dynamics.jacobians(t, x, u);
    let supplied_phi = || system.reward.gradients(t, x, u);
    let (a, b, c, d) = match method {
        Differentiation::Supplied => {
            let (a, b) = supplied_f().ok_or_else(|| Error::MissingDerivative(format!("dynamics at stage {t}")))?;
            let (c, d) = supplied_phi().ok_or_else(|| Error::MissingDerivative(format!("reward at stage {t}")))?;
            (a, b, c, d)
        }
        Differentiation::CentralDifference { step } => {
            if !(step > 0.0) {
                return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
            }
            let (a, b) = fd_jacobians(system, t, x, u, step);
            let (c, d) = fd_gradients(system, t, x, u, step);
            (a, b, c, d)
        }
        Differentiation::Preferred => {
            let (a, b) = supplied_f().unwrap_or_else(|| fd_jacobians(system, t, x, u, DEFAULT_FD_STEP));
            let (c, d) = supplied_phi().unwrap_or_else(|| fd_gradients(system, t, x, u, DEFAULT_FD_STEP));
            (a, b, c, d)
        }
    };
    let n = system.state_dim();
    let m = system.control_dim();
    if a.shape() != (n, n) || b.shape() != (n, m) || c.len() != n || d.len() != m {
        return Err(Error::Dimension(format!("derivatives at stage {t}")));
    }
    if !(all_finite_matrix(&a) && all_finite_matrix(&b) && all_finite(&c) && all_finite(&d)) {
        return Err(Error::NonFinite(format!("derivatives at stage {t}")));
    }
    Ok(LinearizedStage { t, a, b, c, d })
}

/// Linearizations at stages `0..=h`.
pub fn linearize_range(system: &ControlSystem, process: &Process, h: usize, method: Differentiation) -> Result<Vec<LinearizedStage>> {
    (0..=h).map(|t| linearize(system, process, t, method)).collect()
}

fn fd_jacobians(system: &ControlSystem, t: usize, x: &DVector<f64>, u: &DVector<f64>, step: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.len();
    let m = u.len();
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        a.set_column(j, &((system.step(t, &xp, u) - system.step(t, &xm, u)) / (2.0 * step)));
    }
    let mut b = DMatrix::zeros(n, m);
    for j in 0..m {
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += step;
        um[j] -= step;
        b.set_column(j, &((system.step(t, x, &up) - system.step(t, x, &um)) / (2.0 * step)));
    }
    (a, b)
}

fn fd_gradients(system: &ControlSystem, t: usize, x: &DVector<f64>, u: &DVector<f64>, step: f64) -> (DVector<f64>, DVector<f64>) {
    let c = DVector::from_fn(x.len(), |j, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        (system.reward(t, &xp, u) - system.reward(t, &xm, u)) / (2.0 * step)
    });
    let d = DVector::from_fn(u.len(), |j, _| {
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += step;
        um[j] -= step;
        (system.reward(t, x, &up) - system.reward(t, x, &um)) / (2.0 * step)
    });
    (c, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{DiscountedReward, RewardMap, ScheduledDynamics, StageMap};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn integrator(reward: RewardMap, discount: f64) -> ControlSystem {
        let dynamics = ScheduledDynamics::stationary(StageMap::Linear {
            a: DMatrix::identity(1, 1),
            b: DMatrix::identity(1, 1),
        });
        ControlSystem::new(1, 1, Arc::new(dynamics), Arc::new(DiscountedReward { base: reward, discount })).unwrap()
    }

    #[test]
    fn telescoping_integrator() {
        let sys = integrator(RewardMap::Zero, 1.0);
        let p = simulate(&sys, &v(&[0.0]), &[v(&[1.0]), v(&[1.0]), v(&[1.0])], 2).unwrap();
        let xs: Vec<f64> = p.states.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn geometric_decay_ignores_control() {
        let dynamics = ScheduledDynamics::stationary(StageMap::Linear {
            a: DMatrix::identity(2, 2) * 0.5,
            b: DMatrix::zeros(2, 1),
        });
        let reward = DiscountedReward { base: RewardMap::Zero, discount: 1.0 };
        let sys = ControlSystem::new(2, 1, Arc::new(dynamics), Arc::new(reward)).unwrap();
        let p = simulate(&sys, &v(&[1.0, 1.0]), &[v(&[7.0]), v(&[-3.0])], 1).unwrap();
        assert_eq!(p.states, vec![v(&[1.0, 1.0]), v(&[0.5, 0.5]), v(&[0.25, 0.25])]);
    }

    #[test]
    fn simulate_rejects_infeasible_control_and_domain() {
        let sys = integrator(RewardMap::Zero, 1.0)
            .with_control_sets(Schedule::constant(ConvexSet::new_box(v(&[0.0]), v(&[1.0])).unwrap()))
            .unwrap();
        assert!(matches!(
            simulate(&sys, &v(&[0.0]), &[v(&[2.0])], 0),
            Err(Error::InfeasibleControl { t: 0, .. })
        ));
        let sys = integrator(RewardMap::Zero, 1.0)
            .with_state_domains(Schedule::constant(StateDomain::OpenBox { lower: v(&[-1.0]), upper: v(&[1.5]) }))
            .unwrap();
        assert!(matches!(
            simulate(&sys, &v(&[0.0]), &[v(&[1.0]), v(&[1.0])], 1),
            Err(Error::DomainViolation { t: 2, .. })
        ));
        assert!(matches!(simulate(&sys, &v(&[0.0]), &[v(&[1.0])], 1), Err(Error::ProcessTooShort { .. })));
    }

    #[test]
    fn objective_series_verdicts() {
        let controls = vec![v(&[0.0]); 60];
        let zero = integrator(RewardMap::Zero, 1.0);
        let p = simulate(&zero, &v(&[0.0]), &controls, 59).unwrap();
        let rep = evaluate_objective(&zero, &p, 50).unwrap();
        assert!(rep.convergent && rep.partial_sums.iter().all(|s| *s == 0.0));

        let halves = integrator(RewardMap::Constant { value: 1.0 }, 0.5);
        let rep = evaluate_objective(&halves, &p, 40).unwrap();
        assert!((rep.partial_sums[40] - 2.0).abs() < 1e-9);
        assert!(rep.convergent);

        let ones = integrator(RewardMap::Constant { value: 1.0 }, 1.0);
        let rep = evaluate_objective(&ones, &p, 40).unwrap();
        assert_eq!(rep.partial_sums[40], 41.0);
        assert!(!rep.convergent);
    }

    #[test]
    fn comparison_of_identical_processes_is_zero() {
        let sys = integrator(RewardMap::Quadratic { q: DMatrix::identity(1, 1), r: DMatrix::identity(1, 1) }, 1.0);
        let p = simulate(&sys, &v(&[1.0]), &vec![v(&[-0.5]); 12], 11).unwrap();
        let rep = compare_processes(&sys, &p, &p, 11, 1e-9).unwrap();
        assert!(rep.deltas.iter().all(|d| *d == 0.0));
        assert!(rep.dominates_limsup && rep.dominates_liminf);
        assert_eq!(rep.window_start, 9);
    }

    #[test]
    fn comparison_with_geometric_gain() {
        // candidate earns 2^-t more per stage than the challenger
        let reward = FnReward(Box::new(|t, _x, u: &DVector<f64>| u[0] * 0.5f64.powi(t as i32)));
        let dynamics = FnDynamics(Box::new(|_t, x: &DVector<f64>, _u| x.clone()));
        let sys = ControlSystem::new(1, 1, Arc::new(dynamics), Arc::new(reward)).unwrap();
        let cand = simulate(&sys, &v(&[0.0]), &vec![v(&[1.0]); 40], 39).unwrap();
        let chal = simulate(&sys, &v(&[0.0]), &vec![v(&[0.0]); 40], 39).unwrap();
        let rep = compare_processes(&sys, &cand, &chal, 38, 1e-9).unwrap();
        assert!(rep.deltas.windows(2).all(|w| w[1] > w[0]));
        assert!((rep.deltas.last().unwrap() - 2.0).abs() < 1e-10);
        assert!(rep.dominates_limsup && rep.dominates_liminf);
        let rev = compare_processes(&sys, &chal, &cand, 38, 1e-9).unwrap();
        assert!(!rev.dominates_limsup);

        let other = simulate(&sys, &v(&[1.0]), &vec![v(&[0.0]); 40], 39).unwrap();
        assert!(matches!(compare_processes(&sys, &cand, &other, 5, 1e-9), Err(Error::InitialStateMismatch)));
    }

    #[test]
    fn linearize_linear_and_quadratic() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.25, 2.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 3.0]);
        let q = DMatrix::from_diagonal(&v(&[1.0, 2.0]));
        let dynamics = ScheduledDynamics::stationary(StageMap::Linear { a: a.clone(), b: b.clone() });
        let reward = DiscountedReward { base: RewardMap::Quadratic { q, r: DMatrix::identity(1, 1) }, discount: 1.0 };
        let sys = ControlSystem::new(2, 1, Arc::new(dynamics), Arc::new(reward)).unwrap();
        let p = simulate(&sys, &v(&[1.0, 1.0]), &[v(&[0.3])], 0).unwrap();
        let exact = linearize(&sys, &p, 0, Differentiation::Supplied).unwrap();
        assert_eq!(exact.a, a);
        assert_eq!(exact.b, b);
        // maximization convention: φ = −½(xᵀQx + uᵀRu)
        assert_eq!(exact.c, v(&[-1.0, -2.0]));
        let fd = linearize(&sys, &p, 0, Differentiation::CentralDifference { step: 1e-6 }).unwrap();
        assert!((fd.a - &a).amax() < 1e-9);
        assert!((fd.b - &b).amax() < 1e-9);
        assert!((fd.c - exact.c).amax() < 1e-8);
    }

    #[test]
    fn closures_need_finite_differences() {
        let dynamics = FnDynamics(Box::new(|_t, x: &DVector<f64>, u: &DVector<f64>| x + u));
        let reward = FnReward(Box::new(|_t, _x, _u| 0.0));
        let sys = ControlSystem::new(1, 1, Arc::new(dynamics), Arc::new(reward)).unwrap();
        let p = simulate(&sys, &v(&[0.0]), &[v(&[1.0])], 0).unwrap();
        assert!(matches!(linearize(&sys, &p, 0, Differentiation::Supplied), Err(Error::MissingDerivative(_))));
        let lin = linearize(&sys, &p, 0, Differentiation::Preferred).unwrap();
        assert!((lin.b[(0, 0)] - 1.0).abs() < 1e-9);
        assert!(linearize(&sys, &p, 0, Differentiation::CentralDifference { step: 0.0 }).is_err());
    }
}
