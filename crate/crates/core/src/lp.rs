//! Small dense linear programs (backed by `minilp`) and nonnegative least squares.

use crate::error::{Error, Result};
use crate::linalg::{column_span, pinv_solve, select_columns, DEFAULT_RANK_TOL};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Relation {
    Le,
    Ge,
    Eq,
}

/// A linear program over continuous variables, assembled row by row.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    direction: OptimizationDirection,
    objective: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    Lower(f64, minilp::Variable),
    Upper(f64, minilp::Variable),
    Free(minilp::Variable, minilp::Variable),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Unbounded,
    Infeasible,
}

impl LinearProgram {
    /// Variables default to being free.
    pub fn maximize(objective: Vec<f64>) -> Self {
        Self::new(OptimizationDirection::Maximize, objective)
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        Self::new(OptimizationDirection::Minimize, objective)
    }

    fn new(direction: OptimizationDirection, objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            direction,
            objective,
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.bounds[var] = (lower, upper);
    }

    pub fn le(&mut self, coeffs: Vec<f64>, rhs: f64) {
        self.push(coeffs, Relation::Le, rhs);
    }

    pub fn ge(&mut self, coeffs: Vec<f64>, rhs: f64) {
        self.push(coeffs, Relation::Ge, rhs);
    }

    pub fn eq(&mut self, coeffs: Vec<f64>, rhs: f64) {
        self.push(coeffs, Relation::Eq, rhs);
    }

    fn push(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.objective.len(), "row length");
        self.rows.push((coeffs, rel, rhs));
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        if self.objective.iter().chain(self.rows.iter().flat_map(|r| r.0.iter())).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear program coefficients".into()));
        }
        // Every backend variable gets the bounds [0, width]: x = lb + y, x = ub − y or x = y⁺ − y⁻.
        let mut problem = Problem::new(self.direction);
        let mut maps = Vec::with_capacity(self.objective.len());
        let mut shift_obj = 0.0;
        for (&c, &(lb, ub)) in self.objective.iter().zip(&self.bounds) {
            let map = if lb.is_finite() {
                shift_obj += c * lb;
                VarMap::Lower(lb, problem.add_var(c, (0.0, ub - lb)))
            } else if ub.is_finite() {
                shift_obj += c * ub;
                VarMap::Upper(ub, problem.add_var(-c, (0.0, f64::INFINITY)))
            } else {
                let pos = problem.add_var(c, (0.0, f64::INFINITY));
                let neg = problem.add_var(-c, (0.0, f64::INFINITY));
                VarMap::Free(pos, neg)
            };
            maps.push(map);
        }
        for (coeffs, rel, rhs) in &self.rows {
            let mut terms = Vec::new();
            let mut rhs = *rhs;
            for (j, &c) in coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                match maps[j] {
                    VarMap::Lower(lb, v) => {
                        rhs -= c * lb;
                        terms.push((v, c));
                    }
                    VarMap::Upper(ub, v) => {
                        rhs -= c * ub;
                        terms.push((v, -c));
                    }
                    VarMap::Free(p, n) => {
                        terms.push((p, c));
                        terms.push((n, -c));
                    }
                }
            }
            if terms.is_empty() {
                let ok = match rel {
                    Relation::Le => 0.0 <= rhs,
                    Relation::Ge => 0.0 >= rhs,
                    Relation::Eq => rhs == 0.0,
                };
                if ok {
                    continue;
                }
                return Ok(LpOutcome::Infeasible);
            }
            let op = match rel {
                Relation::Le => ComparisonOp::Le,
                Relation::Ge => ComparisonOp::Ge,
                Relation::Eq => ComparisonOp::Eq,
            };
            problem.add_constraint(&terms[..], op, rhs);
        }
        match problem.solve() {
            Ok(sol) => {
                let x: Vec<f64> = maps
                    .iter()
                    .map(|m| match *m {
                        VarMap::Lower(lb, v) => lb + sol[v],
                        VarMap::Upper(ub, v) => ub - sol[v],
                        VarMap::Free(p, n) => sol[p] - sol[n],
                    })
                    .collect();
                let value = sol.objective() + shift_obj;
                if !value.is_finite() || x.iter().any(|v| !v.is_finite()) {
                    return Ok(LpOutcome::Unbounded);
                }
                Ok(LpOutcome::Optimal { x, value })
            }
            Err(minilp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
            Err(minilp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
        }
    }
}

/// Nonnegative least squares `min ‖A x − b‖, x ≥ 0` (Lawson–Hanson active set).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let tol = 10.0 * f64::EPSILON * a.norm().max(1.0) * (a.nrows().max(n) as f64);
    let mut passive = vec![false; n];
    let mut w = a.transpose() * (b - a * &x);
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = select_columns(a, &idx);
            let s_p = pinv_solve(&sub, b, DEFAULT_RANK_TOL);
            let mut s = DVector::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                s[i] = s_p[k];
            }
            if idx.iter().all(|&i| s[i] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &i in &idx {
                if s[i] <= 0.0 {
                    let denom = x[i] - s[i];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x += (&s - &x) * alpha;
            for &i in &idx {
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if passive.iter().all(|p| !p) {
                break;
            }
        }
        w = a.transpose() * (b - a * &x);
    }
    x
}

/// Solution of `min ‖F α + G β − b‖` with `α` free and `β ≥ 0`.
#[derive(Debug, Clone)]
pub struct ConicFit {
    pub free: DVector<f64>,
    pub nonneg: DVector<f64>,
    pub residual: f64,
}

pub fn conic_least_squares(free: &DMatrix<f64>, nonneg: &DMatrix<f64>, b: &DVector<f64>) -> ConicFit {
    let q = column_span(free, DEFAULT_RANK_TOL);
    let project = |m: &DMatrix<f64>| -> DMatrix<f64> {
        if q.ncols() == 0 {
            m.clone()
        } else {
            m - &q * (q.transpose() * m)
        }
    };
    let pb = project(&DMatrix::from_column_slice(b.len(), 1, b.as_slice())).column(0).into_owned();
    let pg = project(nonneg);
    let beta = nnls(&pg, &pb);
    let rest = b - nonneg * &beta;
    let alpha = if free.ncols() == 0 {
        DVector::zeros(0)
    } else {
        pinv_solve(free, &rest, DEFAULT_RANK_TOL)
    };
    let fitted = if free.ncols() == 0 {
        nonneg * &beta
    } else {
        free * &alpha + nonneg * &beta
    };
    let residual = (fitted - b).norm();
    ConicFit {
        free: alpha,
        nonneg: beta,
        residual,
    }
}
