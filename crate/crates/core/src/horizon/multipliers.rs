//! Multipliers `(λ0, p_1..p_{h+1})` of the truncated problem: adjoint recursion plus the
//! variational inequality on the tangent cones of the control sets.

use super::{ConstraintLinearization, TruncatedProblem};
use crate::error::{Error, Result};
use crate::linalg::{column_span, columns_matrix, hstack, null_space, pinv_solve, DEFAULT_RANK_TOL};
use crate::lp::{LinearProgram, LpOutcome};
use crate::model::LinearizedStage;
use crate::sets::ConeGenerators;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Accepted violation of the variational inequality (and its equality part).
pub const DEFAULT_VI_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    /// Try `λ0 = 1`, fall back to `λ0 = 0`.
    NormalFirst,
    AbnormalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Raw,
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet {
    pub h: usize,
    pub lambda0: f64,
    /// `p[i]` is `p_{i+1}`, for `i = 0..=h`.
    pub p: Vec<DVector<f64>>,
    /// `B_0ᵀ p_1`.
    pub q1: DVector<f64>,
    /// `B_1ᵀ p_2`.
    pub q2: DVector<f64>,
    pub branch: Branch,
    pub normalization: Normalization,
}

impl MultiplierSet {
    /// `p_t` for `t ≥ 1`.
    pub fn p_at(&self, t: usize) -> &DVector<f64> {
        &self.p[t - 1]
    }

    pub fn scaled(&self, alpha: f64) -> MultiplierSet {
        MultiplierSet {
            lambda0: self.lambda0 * alpha,
            p: self.p.iter().map(|p| p * alpha).collect(),
            q1: &self.q1 * alpha,
            q2: &self.q2 * alpha,
            ..self.clone()
        }
    }

    /// `‖p_t − A_tᵀ p_{t+1} − λ0 c_t‖` for `t = 1..=h`.
    pub fn adjoint_residuals(&self, stages: &[LinearizedStage]) -> Vec<f64> {
        (1..=self.h)
            .map(|t| (self.p_at(t) - stages[t].a.transpose() * self.p_at(t + 1) - &stages[t].c * self.lambda0).norm())
            .collect()
    }

    /// Largest violation of the variational inequality at each `t = 0..=h`, measured on the
    /// cone generators (absolute value on lineality vectors, positive part on rays).
    pub fn vi_violations(&self, stages: &[LinearizedStage], cones: &[ConeGenerators]) -> Vec<f64> {
        (0..=self.h)
            .map(|t| {
                let g = &stages[t].d * self.lambda0 + stages[t].b.transpose() * self.p_at(t + 1);
                cone_violation(&g, &cones[t])
            })
            .collect()
    }
}

fn cone_violation(g: &DVector<f64>, cone: &ConeGenerators) -> f64 {
    let lin = (cone.lineality.transpose() * g).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    cone.rays.iter().map(|r| r.dot(g)).fold(lin, f64::max)
}

/// Euclidean norm of the projection of `(q1, q2)` onto `span T_0 × span T_1`.
pub fn restricted_norm(q1: &DVector<f64>, q2: &DVector<f64>, cone0: &ConeGenerators, cone1: &ConeGenerators) -> f64 {
    let s0 = cone0.span_basis();
    let s1 = cone1.span_basis();
    let a = (s0.transpose() * q1).norm();
    let b = (s1.transpose() * q2).norm();
    a.hypot(b)
}

/// Stage equations `E P = λ0 e` (lineality) and `G P ≤ −λ0 γ` (rays) in the unknown `P = p_{h+1}`.
struct Reduced {
    e_mat: DMatrix<f64>,
    e_rhs: DVector<f64>,
    g_mat: DMatrix<f64>,
    g_rhs: DVector<f64>,
}

fn reduce(lin: &ConstraintLinearization, cones: &[ConeGenerators]) -> Reduced {
    let n = lin.state_dim;
    let h = lin.h;
    // p_t = Φ_t P + λ0 r_t with Φ_{h+1} = I, r_{h+1} = 0.
    let mut phi = vec![DMatrix::identity(n, n); h + 2];
    let mut r = vec![DVector::zeros(n); h + 2];
    for t in (1..=h).rev() {
        let at = lin.stages[t].a.transpose();
        phi[t] = &at * &phi[t + 1];
        r[t] = &at * &r[t + 1] + &lin.stages[t].c;
    }
    let mut e_rows: Vec<DVector<f64>> = Vec::new();
    let mut e_rhs = Vec::new();
    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut g_rhs = Vec::new();
    for t in 0..=h {
        let bt = lin.stages[t].b.transpose();
        // g_t = K_t P + λ0 k_t
        let k_mat = &bt * &phi[t + 1];
        let k_vec = &lin.stages[t].d + &bt * &r[t + 1];
        let cone = &cones[t];
        for j in 0..cone.lineality.ncols() {
            let l = cone.lineality.column(j);
            e_rows.push(k_mat.transpose() * l);
            e_rhs.push(-l.dot(&k_vec));
        }
        for ray in &cone.rays {
            g_rows.push(k_mat.transpose() * ray);
            g_rhs.push(-ray.dot(&k_vec));
        }
    }
    Reduced {
        e_mat: columns_matrix(n, &e_rows).transpose(),
        e_rhs: DVector::from_vec(e_rhs),
        g_mat: columns_matrix(n, &g_rows).transpose(),
        g_rhs: DVector::from_vec(g_rhs),
    }
}

impl Reduced {
    fn violation(&self, p: &DVector<f64>, lambda0: f64) -> f64 {
        let eq = (&self.e_mat * p - &self.e_rhs * lambda0).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (&self.g_mat * p - &self.g_rhs * lambda0).iter().fold(eq, |a, v| a.max(*v))
    }

    fn normal(&self, tol: f64) -> Result<(DVector<f64>, f64)> {
        let n = self.e_mat.ncols();
        let p0 = pinv_solve(&self.e_mat, &self.e_rhs, DEFAULT_RANK_TOL);
        let v0 = self.violation(&p0, 1.0);
        if v0 <= tol || self.g_mat.nrows() == 0 {
            return Ok((p0, v0));
        }
        // Move inside null(E) to push the ray inequalities below zero: min s, G(P0 + N z) − γ ≤ s.
        let null = null_space(&self.e_mat, DEFAULT_RANK_TOL);
        let k = null.ncols();
        let mut obj = vec![0.0; k + 1];
        obj[k] = 1.0;
        let mut lp = LinearProgram::minimize(obj);
        lp.set_bounds(k, -1.0, f64::INFINITY);
        let gn = &self.g_mat * &null;
        let base = &self.g_mat * &p0 - &self.g_rhs;
        for i in 0..gn.nrows() {
            let mut row: Vec<f64> = gn.row(i).iter().cloned().collect();
            row.push(-1.0);
            lp.le(row, -base[i]);
        }
        let p = match lp.solve()? {
            LpOutcome::Optimal { x, .. } => p0 + &null * DVector::from_column_slice(&x[..k]),
            _ => p0,
        };
        debug_assert_eq!(p.len(), n);
        let v = self.violation(&p, 1.0);
        Ok((p, v))
    }

    /// Candidate terminal costates with `λ0 = 0`: unit generators of `{P ∈ null(E) : G P ≤ 0}`.
    fn abnormal_candidates(&self) -> Vec<DVector<f64>> {
        let null = null_space(&self.e_mat, DEFAULT_RANK_TOL);
        if null.ncols() == 0 {
            return Vec::new();
        }
        let cone = ConeGenerators::of_polyhedral_cone(&(&self.g_mat * &null));
        let mut out: Vec<DVector<f64>> = cone.lineality.column_iter().map(|c| (&null * c).normalize()).collect();
        out.extend(cone.rays.iter().map(|r| (&null * r).normalize()));
        out
    }
}

fn back_substitute(lin: &ConstraintLinearization, lambda0: f64, terminal: DVector<f64>, branch: Branch) -> MultiplierSet {
    let h = lin.h;
    let mut p = vec![DVector::zeros(lin.state_dim); h + 1];
    p[h] = terminal;
    for t in (1..=h).rev() {
        p[t - 1] = lin.stages[t].a.transpose() * &p[t] + &lin.stages[t].c * lambda0;
    }
    let q1 = lin.stages[0].b.transpose() * &p[0];
    let q2 = lin.stages[1].b.transpose() * &p[1];
    MultiplierSet {
        h,
        lambda0,
        p,
        q1,
        q2,
        branch,
        normalization: Normalization::Raw,
    }
}

/// Solves the first-order system of the truncated problem with the default tolerance.
pub fn compute_multipliers(problem: &TruncatedProblem, lin: &ConstraintLinearization, mode: SolveMode) -> Result<MultiplierSet> {
    let cones = problem.cones()?;
    compute_multipliers_with(lin, &cones, mode, DEFAULT_VI_TOL)
}

/// As [`compute_multipliers`], with explicit tangent-cone generators for `t = 0..=h`.
pub fn compute_multipliers_with(lin: &ConstraintLinearization, cones: &[ConeGenerators], mode: SolveMode, tol: f64) -> Result<MultiplierSet> {
    if cones.len() != lin.h + 1 {
        return Err(Error::Dimension(format!("{} cones for horizon {}", cones.len(), lin.h)));
    }
    let red = reduce(lin, cones);
    let mut normal_violation = f64::INFINITY;
    if mode == SolveMode::NormalFirst {
        let (p, v) = red.normal(tol)?;
        log::debug!("h={} normal branch violation {v:.3e}", lin.h);
        if v <= tol {
            return Ok(back_substitute(lin, 1.0, p, Branch::Normal));
        }
        normal_violation = v;
    }
    let mut best: Option<(f64, MultiplierSet)> = None;
    let mut abnormal_violation = f64::INFINITY;
    for cand in red.abnormal_candidates() {
        let v = red.violation(&cand, 0.0);
        abnormal_violation = abnormal_violation.min(v);
        if v > tol {
            continue;
        }
        let ms = back_substitute(lin, 0.0, cand, Branch::Abnormal);
        let score = restricted_norm(&ms.q1, &ms.q2, &cones[0], &cones[1]);
        if best.as_ref().map_or(true, |(s, _)| score > *s + 1e-12) {
            best = Some((score, ms));
        }
    }
    best.map(|(_, ms)| ms).ok_or(Error::NoMultiplier {
        h: lin.h,
        normal: normal_violation,
        abnormal: abnormal_violation,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NontrivialityReport {
    pub lambda0: f64,
    /// Norm of `p_1` restricted to `span Z_0`.
    pub p1_restricted: f64,
    /// Norm of `p_2` restricted to `span Z_1`.
    pub p2_restricted: f64,
    pub total: f64,
    pub pass: bool,
}

/// Generating sets of `Z_0 = B_0 T_0` and `Z_1 = B_1 T_1`, as columns.
pub fn z_generators(lin: &ConstraintLinearization, cone0: &ConeGenerators, cone1: &ConeGenerators) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = lin.state_dim;
    let z = |b: &DMatrix<f64>, c: &ConeGenerators| {
        let gens = hstack(c.dim, &[&c.lineality, &c.ray_matrix()]);
        let out = b * gens;
        debug_assert_eq!(out.nrows(), n);
        out
    };
    (z(&lin.stages[0].b, cone0), z(&lin.stages[1].b, cone1))
}

pub fn check_nontriviality(ms: &MultiplierSet, z0: &DMatrix<f64>, z1: &DMatrix<f64>) -> NontrivialityReport {
    let restrict = |p: &DVector<f64>, z: &DMatrix<f64>| (column_span(z, DEFAULT_RANK_TOL).transpose() * p).norm();
    let p1 = restrict(ms.p_at(1), z0);
    let p2 = restrict(ms.p_at(2), z1);
    let total = ms.lambda0 + p1 + p2;
    NontrivialityReport {
        lambda0: ms.lambda0,
        p1_restricted: p1,
        p2_restricted: p2,
        total,
        pass: total > 1e-12,
    }
}
