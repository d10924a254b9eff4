//! Truncation to a pinned-endpoint finite-horizon problem and its first-order analysis.

mod bound;
mod multipliers;

pub use bound::{lemma42_bound, BoundCertificate, SampleCheck, DEFAULT_BOUND_SAMPLES};
pub use multipliers::{
    check_nontriviality, compute_multipliers, compute_multipliers_with, restricted_norm, z_generators, Branch, MultiplierSet, Normalization, NontrivialityReport,
    SolveMode, DEFAULT_VI_TOL,
};

use crate::error::{Error, Result};
use crate::model::{linearize_range, ControlSystem, Differentiation, LinearizedStage, Process};
use crate::operator::range_report;
use crate::sets::ConeGenerators;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Relative dynamics residual accepted for a reference process.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// `max Σ_{t≤h} φ_t` subject to the dynamics, `x_0 = σ` and `x_{h+1}` pinned to the reference.
#[derive(Debug, Clone)]
pub struct TruncatedProblem {
    pub h: usize,
    pub system: ControlSystem,
    pub initial_state: DVector<f64>,
    pub terminal_state: DVector<f64>,
    /// Reference restricted to stages `0..=h` (states `x_0..x_{h+1}`).
    pub reference: Process,
}

pub fn truncate(system: &ControlSystem, reference: &Process, h: usize) -> Result<TruncatedProblem> {
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    reference.require(h + 1)?;
    for t in 0..=h {
        let next = system.step(t, &reference.states[t], &reference.controls[t]);
        let residual = (&reference.states[t + 1] - &next).norm();
        if !(residual <= FEASIBILITY_TOL * (1.0 + next.norm())) {
            return Err(Error::InfeasibleReference { t, residual });
        }
        let set = system.control_set(t);
        if !set.contains(&reference.controls[t]) {
            return Err(Error::InfeasibleControl {
                t,
                control: reference.controls[t].iter().cloned().collect(),
                violation: set.violation(&reference.controls[t]),
            });
        }
    }
    Ok(TruncatedProblem {
        h,
        system: system.clone(),
        initial_state: reference.states[0].clone(),
        terminal_state: reference.states[h + 1].clone(),
        reference: Process {
            initial_state: reference.initial_state.clone(),
            states: reference.states[..=h + 1].to_vec(),
            controls: reference.controls[..=h].to_vec(),
        },
    })
}

impl TruncatedProblem {
    /// `J_h = Σ_{t=0}^{h} φ_t` for free states `x_1..x_h` and controls `u_0..u_h`.
    pub fn objective(&self, states: &[DVector<f64>], controls: &[DVector<f64>]) -> f64 {
        (0..=self.h)
            .map(|t| self.system.reward(t, self.state(states, t), &controls[t]))
            .sum()
    }

    pub fn reference_objective(&self) -> f64 {
        self.objective(&self.reference.states[1..=self.h], &self.reference.controls)
    }

    /// `g^h`: the stacked blocks `−x_{t+1} + f_t(x_t, u_t)` with `x_0 = σ` and `x_{h+1}` pinned.
    pub fn constraint_map(&self, states: &[DVector<f64>], controls: &[DVector<f64>]) -> DVector<f64> {
        let n = self.system.state_dim();
        let mut g = DVector::zeros((self.h + 1) * n);
        for t in 0..=self.h {
            let block = self.system.step(t, self.state(states, t), &controls[t]) - self.state(states, t + 1);
            g.rows_mut(t * n, n).copy_from(&block);
        }
        g
    }

    fn state<'a>(&'a self, free: &'a [DVector<f64>], t: usize) -> &'a DVector<f64> {
        if t == 0 {
            &self.initial_state
        } else if t == self.h + 1 {
            &self.terminal_state
        } else {
            &free[t - 1]
        }
    }

    /// Tangent-cone generators of `U_t` at the reference control, `t = 0..=h`.
    pub fn cones(&self) -> Result<Vec<ConeGenerators>> {
        (0..=self.h)
            .map(|t| {
                Ok(self
                    .system
                    .control_set(t)
                    .tangent_cone(&self.reference.controls[t])?
                    .recession_generators())
            })
            .collect()
    }

    /// Number of decision variables `h·n + (h+1)·m`.
    pub fn num_variables(&self) -> usize {
        self.h * self.system.state_dim() + (self.h + 1) * self.system.control_dim()
    }

    /// Splits a stacked decision vector `(x_1..x_h, u_0..u_h)`.
    pub fn split(&self, y: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let n = self.system.state_dim();
        let m = self.system.control_dim();
        let xs = (0..self.h).map(|i| y.rows(i * n, n).into_owned()).collect();
        let us = (0..=self.h).map(|i| y.rows(self.h * n + i * m, m).into_owned()).collect();
        (xs, us)
    }

    /// Stacks the reference decision vector.
    pub fn reference_point(&self) -> DVector<f64> {
        let n = self.system.state_dim();
        let m = self.system.control_dim();
        let mut y = DVector::zeros(self.num_variables());
        for t in 1..=self.h {
            y.rows_mut((t - 1) * n, n).copy_from(&self.reference.states[t]);
        }
        for t in 0..=self.h {
            y.rows_mut(self.h * n + t * m, m).copy_from(&self.reference.controls[t]);
        }
        y
    }
}

/// `Dg^h` at the reference together with its stage blocks.
#[derive(Debug, Clone)]
pub struct ConstraintLinearization {
    pub h: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub stages: Vec<LinearizedStage>,
    pub assembled: DMatrix<f64>,
}

pub fn assemble_constraints(problem: &TruncatedProblem, method: Differentiation) -> Result<ConstraintLinearization> {
    let stages = linearize_range(&problem.system, &problem.reference, problem.h, method)?;
    assemble_from_stages(problem.h, stages)
}

/// Lays out the block-bidiagonal matrix over the columns `(x_1..x_h, u_0..u_h)`.
pub fn assemble_from_stages(h: usize, stages: Vec<LinearizedStage>) -> Result<ConstraintLinearization> {
    if stages.len() != h + 1 {
        return Err(Error::Dimension(format!("{} stages for horizon {h}", stages.len())));
    }
    let n = stages[0].a.nrows();
    let m = stages[0].b.ncols();
    if stages.iter().any(|s| s.a.shape() != (n, n) || s.b.shape() != (n, m)) {
        return Err(Error::Dimension("inconsistent stage blocks".into()));
    }
    let mut d = DMatrix::zeros((h + 1) * n, h * n + (h + 1) * m);
    for (t, s) in stages.iter().enumerate() {
        let row = t * n;
        if t < h {
            d.view_mut((row, t * n), (n, n)).copy_from(&(-DMatrix::identity(n, n)));
        }
        if t >= 1 {
            d.view_mut((row, (t - 1) * n), (n, n)).copy_from(&s.a);
        }
        d.view_mut((row, h * n + t * m), (n, m)).copy_from(&s.b);
    }
    Ok(ConstraintLinearization {
        h,
        state_dim: n,
        control_dim: m,
        stages,
        assembled: d,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SurjectivityReport {
    /// Always true in finite dimension; kept for the report.
    pub closed_range: bool,
    pub rank: usize,
    pub rows: usize,
    pub surjective: bool,
    /// Preimage-bound constant of `Dg^h`.
    pub constant: f64,
}

pub fn check_closedness_surjectivity(lin: &ConstraintLinearization, rank_tol: f64) -> Result<SurjectivityReport> {
    let r = range_report(&lin.assembled, rank_tol)?;
    Ok(SurjectivityReport {
        closed_range: true,
        rank: r.numerical_rank,
        rows: lin.assembled.nrows(),
        surjective: r.surjective,
        constant: r.constant(),
    })
}
