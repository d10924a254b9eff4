//! Independent check of the four first-order conditions for a process and multipliers,
//! up to a finite depth.

use crate::error::{Error, Result};
use crate::horizon::{restricted_norm, MultiplierSet, FEASIBILITY_TOL};
use crate::lp::{LinearProgram, LpOutcome};
use crate::model::{linearize_range, ControlSystem, Differentiation, Process};
use crate::sets::{ConeGenerators, ConvexSet};
use nalgebra::DVector;
use serde::Serialize;

/// Normalization constants at or below this are treated as zero.
pub const DEGENERATE_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub adjoint: f64,
    pub vi: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { adjoint: 1e-8, vi: 1e-8 }
    }
}

/// Maximum of `⟨g, u − û⟩` over a control set.
#[derive(Debug, Clone, PartialEq)]
pub struct SetMaximum {
    /// `+∞` when a recession direction has positive slope.
    pub value: f64,
    pub argmax: Option<DVector<f64>>,
    /// Unit-box recession direction with positive slope, when unbounded.
    pub direction: Option<DVector<f64>>,
}

impl SetMaximum {
    pub fn is_unbounded(&self) -> bool {
        self.value == f64::INFINITY
    }
}

/// Exact maximum of `⟨g, u − û⟩` over `set`. Recession directions whose slope does not exceed
/// `slope_tol` count as annihilated by `g`.
pub fn max_over_control_set(g: &DVector<f64>, set: &ConvexSet, u_hat: &DVector<f64>, slope_tol: f64) -> Result<SetMaximum> {
    if g.len() != set.dim() || u_hat.len() != set.dim() {
        return Err(Error::Dimension("gradient, set and point disagree".into()));
    }
    if !set.contains(u_hat) {
        return Err(Error::NotMember(set.violation(u_hat)));
    }
    match set {
        ConvexSet::AllSpace { .. } => Ok(unbounded_or(g, g.iter().map(|v| v.abs()).sum(), g.map(f64::signum), slope_tol, u_hat)),
        ConvexSet::Box { lower, upper } => {
            let m = g.len();
            let mut slope = 0.0;
            let mut dir = DVector::zeros(m);
            let mut u = u_hat.clone();
            for i in 0..m {
                if g[i] > 0.0 {
                    if upper[i].is_finite() {
                        u[i] = upper[i];
                    } else {
                        slope += g[i];
                        dir[i] = 1.0;
                    }
                } else if g[i] < 0.0 {
                    if lower[i].is_finite() {
                        u[i] = lower[i];
                    } else {
                        slope -= g[i];
                        dir[i] = -1.0;
                    }
                }
            }
            if slope > slope_tol {
                return Ok(SetMaximum { value: f64::INFINITY, argmax: None, direction: Some(dir) });
            }
            Ok(SetMaximum { value: g.dot(&(&u - u_hat)), argmax: Some(u), direction: None })
        }
        ConvexSet::HalfSpaces { a, b } => {
            let mut lp = LinearProgram::maximize(g.iter().cloned().collect());
            for i in 0..a.nrows() {
                lp.le(a.row(i).iter().cloned().collect(), b[i]);
            }
            match lp.solve()? {
                LpOutcome::Optimal { x, .. } => {
                    let u = DVector::from_vec(x);
                    Ok(SetMaximum { value: g.dot(&(&u - u_hat)), argmax: Some(u), direction: None })
                }
                LpOutcome::Infeasible => Err(Error::LinearProgram("control set is empty".into())),
                LpOutcome::Unbounded => {
                    let (slope, dir) = recession_slope(g, a)?;
                    if slope > slope_tol {
                        return Ok(SetMaximum { value: f64::INFINITY, argmax: None, direction: Some(dir) });
                    }
                    // Negligible slope: the maximum over the pointed part is attained at a vertex.
                    let best = set
                        .vertices()
                        .into_iter()
                        .map(|v| (g.dot(&(&v - u_hat)), v))
                        .fold(None::<(f64, DVector<f64>)>, |acc, cur| match acc {
                            Some(a) if a.0 >= cur.0 => Some(a),
                            _ => Some(cur),
                        });
                    Ok(match best {
                        Some((value, v)) => SetMaximum { value: value.max(0.0), argmax: Some(v), direction: None },
                        None => SetMaximum { value: 0.0, argmax: Some(u_hat.clone()), direction: None },
                    })
                }
            }
        }
    }
}

fn unbounded_or(g: &DVector<f64>, slope: f64, dir: DVector<f64>, slope_tol: f64, u_hat: &DVector<f64>) -> SetMaximum {
    if slope > slope_tol && g.amax() > 0.0 {
        SetMaximum { value: f64::INFINITY, argmax: None, direction: Some(dir) }
    } else {
        SetMaximum { value: 0.0, argmax: Some(u_hat.clone()), direction: None }
    }
}

/// `max g·d` over the recession cone `{a d ≤ 0}` intersected with the unit box.
fn recession_slope(g: &DVector<f64>, a: &nalgebra::DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let m = g.len();
    let mut lp = LinearProgram::maximize(g.iter().cloned().collect());
    for j in 0..m {
        lp.set_bounds(j, -1.0, 1.0);
    }
    for i in 0..a.nrows() {
        lp.le(a.row(i).iter().cloned().collect(), 0.0);
    }
    match lp.solve()? {
        LpOutcome::Optimal { x, value } => Ok((value, DVector::from_vec(x))),
        _ => Err(Error::LinearProgram("recession slope problem is not bounded".into())),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionOne {
    pub pass: bool,
    /// `‖(λ0, p_1, p_2)‖` of the normalized copy.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionTwo {
    pub pass: bool,
    pub lambda0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionThree {
    pub pass: bool,
    /// Residuals for `t = 1..=t_check`.
    pub residuals: Vec<f64>,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionFour {
    pub pass: bool,
    /// Maximal inner product for `t = 0..=t_check`; `+∞` (JSON `null`) when unbounded.
    pub violations: Vec<f64>,
    pub max: f64,
    /// First unbounded stage and its recession direction.
    pub unbounded: Option<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub t_check: usize,
    /// Positive constant the multipliers were divided by before judging.
    pub scale: f64,
    /// `restricted` (λ0 plus restricted norm of (q1, q2)), `fallback` (λ0 + ‖p_1‖ + ‖p_2‖) or `none`.
    pub scale_basis: String,
    pub cond1_nontrivial: ConditionOne,
    pub cond2_sign: ConditionTwo,
    pub cond3_adjoint: ConditionThree,
    pub cond4_variational: ConditionFour,
    pub pass: bool,
    pub first_failure: Option<u8>,
    pub tolerances: Tolerances,
    pub note: String,
}

/// Checks conditions 1–4 for `t ≤ t_check`; `p[i]` is `p_{i+1}` and needs `t_check + 1` entries.
pub fn verify(
    system: &ControlSystem,
    process: &Process,
    lambda0: f64,
    p: &[DVector<f64>],
    t_check: usize,
    tol: Tolerances,
) -> Result<VerificationReport> {
    let t_check = t_check.max(1);
    process.require(t_check + 1)?;
    if p.len() < t_check + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} costates supplied, depth {t_check} needs {}",
            p.len(),
            t_check + 1
        )));
    }
    let n = system.state_dim();
    if p.iter().any(|v| v.len() != n) {
        return Err(Error::Dimension("costate length differs from state_dim".into()));
    }
    if !lambda0.is_finite() || p.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("multipliers".into()));
    }
    for t in 0..=t_check {
        let next = system.step(t, &process.states[t], &process.controls[t]);
        let residual = (&process.states[t + 1] - &next).norm();
        if !(residual <= FEASIBILITY_TOL * (1.0 + next.norm())) {
            return Err(Error::InfeasibleReference { t, residual });
        }
    }
    let stages = linearize_range(system, process, t_check, Differentiation::Preferred)?;
    let cone = |t: usize| -> Result<ConeGenerators> {
        Ok(system.control_set(t).tangent_cone(&process.controls[t])?.recession_generators())
    };
    let q1 = stages[0].b.transpose() * &p[0];
    let q2 = stages[1].b.transpose() * &p[1];
    let restricted = lambda0 + restricted_norm(&q1, &q2, &cone(0)?, &cone(1)?);
    let fallback = lambda0 + p[0].norm() + p[1].norm();
    let (scale, scale_basis) = if restricted > DEGENERATE_SCALE {
        (restricted, "restricted")
    } else if fallback > DEGENERATE_SCALE {
        (fallback, "fallback")
    } else {
        (1.0, "none")
    };
    let l0 = lambda0 / scale;
    let ps: Vec<DVector<f64>> = p.iter().map(|v| v / scale).collect();

    let margin = (l0 * l0 + ps[0].norm_squared() + ps[1].norm_squared()).sqrt();
    let cond1 = ConditionOne { pass: margin > DEGENERATE_SCALE, margin };
    let cond2 = ConditionTwo { pass: l0 >= -1e-12, lambda0: l0 };

    let residuals: Vec<f64> = (1..=t_check)
        .map(|t| (&ps[t - 1] - stages[t].a.transpose() * &ps[t] - &stages[t].c * l0).norm())
        .collect();
    let max3 = residuals.iter().cloned().fold(0.0, f64::max);
    let cond3 = ConditionThree { pass: max3 <= tol.adjoint, residuals, max: max3 };

    let mut violations = Vec::with_capacity(t_check + 1);
    let mut unbounded = None;
    for t in 0..=t_check {
        let g = &stages[t].d * l0 + stages[t].b.transpose() * &ps[t];
        let res = max_over_control_set(&g, system.control_set(t), &process.controls[t], tol.vi)?;
        if res.is_unbounded() && unbounded.is_none() {
            unbounded = Some((t, res.direction.clone().map(|d| d.iter().cloned().collect()).unwrap_or_default()));
        }
        violations.push(res.value);
    }
    let max4 = violations.iter().cloned().fold(0.0, f64::max);
    let cond4 = ConditionFour { pass: max4 <= tol.vi, violations, max: max4, unbounded };

    let flags = [cond1.pass, cond2.pass, cond3.pass, cond4.pass];
    let first_failure = flags.iter().position(|ok| !ok).map(|i| i as u8 + 1);
    Ok(VerificationReport {
        t_check,
        scale,
        scale_basis: scale_basis.into(),
        cond1_nontrivial: cond1,
        cond2_sign: cond2,
        cond3_adjoint: cond3,
        cond4_variational: cond4,
        pass: first_failure.is_none(),
        first_failure,
        tolerances: tol,
        note: format!("conditions checked for stages t <= {t_check} only"),
    })
}

/// Verifies a computed multiplier set to its own horizon.
pub fn verify_multipliers(system: &ControlSystem, process: &Process, ms: &MultiplierSet, tol: Tolerances) -> Result<VerificationReport> {
    verify(system, process, ms.lambda0, &ms.p, ms.h, tol)
}
