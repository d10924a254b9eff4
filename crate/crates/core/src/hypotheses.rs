//! Structural hypotheses at a reference process: range conditions on the stage
//! Jacobians and conic surjectivity of the control directions.

use crate::error::{Error, Result};
use crate::linalg::{column_span, hstack, orthogonal_complement, DEFAULT_RANK_TOL};
use crate::lp::{LinearProgram, LpOutcome};
use crate::model::{linearize_range, ControlSystem, Differentiation, LinearizedStage, Process, StateDomain};
use crate::operator::{range_report, sum_of_ranges_equals, RangeTarget};
use crate::sets::ConeGenerators;
use nalgebra::DMatrix;
use serde::Serialize;

/// Default number of stages examined for hypotheses quantified over all `t`.
pub const DEFAULT_HORIZON_CAP: usize = 50;

/// Positive-spanning LP margins at or below this count as failure.
pub const SPANNING_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Automatic,
    NotChecked,
}

impl Verdict {
    pub fn is_fail(self) -> bool {
        self == Verdict::Fail
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub verdict: Verdict,
    pub margin: Option<f64>,
    pub note: String,
}

impl Check {
    fn new(pass: bool, margin: Option<f64>, note: impl Into<String>) -> Self {
        Check {
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            margin,
            note: note.into(),
        }
    }

    fn automatic(note: impl Into<String>) -> Self {
        Check { verdict: Verdict::Automatic, margin: None, note: note.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageCheck {
    pub t: usize,
    #[serde(flatten)]
    pub check: Check,
}

/// Result of deciding whether `span(subspace) + cone(rays) = R^n`.
#[derive(Debug, Clone, Serialize)]
pub struct ConeSumReport {
    pub pass: bool,
    pub subspace_rank: usize,
    /// Smallest retained singular value of the subspace generators.
    pub subspace_margin: Option<f64>,
    /// Interiority radius `τ` of the projected rays on the complement, when one is needed.
    pub spanning_margin: Option<f64>,
    /// Orthonormal basis of the complement `S⊥`.
    #[serde(skip)]
    pub complement: DMatrix<f64>,
    /// Rays projected onto `S⊥`, in complement coordinates.
    #[serde(skip)]
    pub projected_rays: DMatrix<f64>,
}

impl ConeSumReport {
    fn margin(&self) -> Option<f64> {
        match (self.subspace_margin, self.spanning_margin) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

/// Decides `range(subspace) + cone(rays) = R^n`: project the rays onto the complement of the
/// subspace part and require them to span it positively.
pub fn cone_sum_covers_space(subspace: &DMatrix<f64>, rays: &DMatrix<f64>, rank_tol: f64) -> Result<ConeSumReport> {
    let n = subspace.nrows();
    if rays.nrows() != n {
        return Err(Error::Dimension("subspace and ray generators differ in row count".into()));
    }
    let sub = range_report(subspace, rank_tol)?;
    let complement = orthogonal_complement(&sub.range_basis, n);
    let k = complement.ncols();
    let projected_rays = complement.transpose() * rays;
    let subspace_margin = (sub.numerical_rank > 0).then(|| sub.constant());
    if k == 0 {
        return Ok(ConeSumReport {
            pass: true,
            subspace_rank: sub.numerical_rank,
            subspace_margin,
            spanning_margin: None,
            complement,
            projected_rays,
        });
    }
    let full_rank = range_report(&projected_rays, rank_tol)?.numerical_rank == k;
    let tau = positive_dependence_margin(&projected_rays)?;
    Ok(ConeSumReport {
        pass: full_rank && tau > SPANNING_TOL,
        subspace_rank: sub.numerical_rank,
        subspace_margin,
        spanning_margin: Some(tau),
        complement,
        projected_rays,
    })
}

/// `max τ` subject to `R λ = 0`, `Σ λ = 1`, `λ_i ≥ τ`; zero when no strictly positive
/// dependence exists (or there are no columns).
fn positive_dependence_margin(r: &DMatrix<f64>) -> Result<f64> {
    let cols = r.ncols();
    if cols == 0 {
        return Ok(0.0);
    }
    let mut obj = vec![0.0; cols + 1];
    obj[cols] = 1.0;
    let mut lp = LinearProgram::maximize(obj);
    for j in 0..cols {
        lp.set_bounds(j, 0.0, f64::INFINITY);
        let mut row = vec![0.0; cols + 1];
        row[j] = 1.0;
        row[cols] = -1.0;
        lp.ge(row, 0.0);
    }
    for i in 0..r.nrows() {
        let mut row: Vec<f64> = r.row(i).iter().cloned().collect();
        row.push(0.0);
        lp.eq(row, 0.0);
    }
    let mut sum = vec![1.0; cols + 1];
    sum[cols] = 0.0;
    lp.eq(sum, 1.0);
    Ok(match lp.solve()? {
        LpOutcome::Optimal { value, .. } => value.max(0.0),
        _ => 0.0,
    })
}

fn cone_parts(m: &DMatrix<f64>, cone: &ConeGenerators) -> (DMatrix<f64>, DMatrix<f64>) {
    (m * &cone.lineality, m * cone.ray_matrix())
}

/// `A_t B_{t−1}(U) + B_t(T_{U_t}(û_t)) = R^n`.
pub fn check_h4(prev: &LinearizedStage, cur: &LinearizedStage, cone: &ConeGenerators, rank_tol: f64) -> Result<ConeSumReport> {
    let n = cur.a.nrows();
    if cone.dim != cur.b.ncols() || prev.b.nrows() != n {
        return Err(Error::Dimension("stage blocks and cone disagree".into()));
    }
    let composed = &cur.a * &prev.b;
    let (lin, rays) = cone_parts(&cur.b, cone);
    cone_sum_covers_space(&hstack(n, &[&composed, &lin]), &rays, rank_tol)
}

/// `A_1 B_0(T_{U_0}(û_0)) + B_1(T_{U_1}(û_1)) = R^n`.
pub fn check_h5(
    lin0: &LinearizedStage,
    lin1: &LinearizedStage,
    cone0: &ConeGenerators,
    cone1: &ConeGenerators,
    rank_tol: f64,
) -> Result<ConeSumReport> {
    let n = lin1.a.nrows();
    if cone0.dim != lin0.b.ncols() || cone1.dim != lin1.b.ncols() {
        return Err(Error::Dimension("stage blocks and cones disagree".into()));
    }
    let (l0, r0) = cone_parts(&(&lin1.a * &lin0.b), cone0);
    let (l1, r1) = cone_parts(&lin1.b, cone1);
    cone_sum_covers_space(&hstack(n, &[&l0, &l1]), &hstack(n, &[&r0, &r1]), rank_tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct EquationReport {
    pub eq43: Vec<StageCheck>,
    pub eq44: Vec<StageCheck>,
    pub eq45: Vec<StageCheck>,
    pub eq46: Check,
}

/// The range conditions on `stages[0..]` (which must include at least stages 0 and 1).
pub fn check_range_equations(stages: &[LinearizedStage], rank_tol: f64) -> Result<EquationReport> {
    if stages.len() < 2 {
        return Err(Error::InvalidArgument("need linearizations at stages 0 and 1".into()));
    }
    let n = stages[0].a.nrows();
    let full = |s: &LinearizedStage| hstack(n, &[&s.a, &s.b]);
    let mut eq43 = Vec::new();
    let mut eq44 = Vec::new();
    let mut eq45 = Vec::new();
    for (t, s) in stages.iter().enumerate() {
        let r = range_report(&full(s), rank_tol)?;
        eq43.push(StageCheck {
            t,
            check: Check::automatic(format!("closed in finite dimension; rank {}", r.numerical_rank)),
        });
        if t >= 1 {
            let composed = &s.a * &stages[t - 1].b;
            let rep = sum_of_ranges_equals(&composed, &s.b, &RangeTarget::RangeOf(full(s)), rank_tol)?;
            let margin = range_report(&hstack(n, &[&composed, &s.b]), rank_tol)?.constant();
            eq44.push(StageCheck {
                t,
                check: Check::new(
                    rep.equal,
                    Some(margin),
                    format!("rank of sum {} vs rank of [A B] {}", rep.sum_rank, rep.target_rank),
                ),
            });
        }
        if t >= 2 {
            eq45.push(StageCheck {
                t,
                check: Check::new(r.surjective, Some(r.constant()), format!("rank {} of {n}", r.numerical_rank)),
            });
        }
    }
    let sum = hstack(n, &[&(&stages[1].a * &stages[0].b), &stages[1].b]);
    let r = range_report(&sum, rank_tol)?;
    let eq46 = Check::new(r.surjective, Some(r.constant()), format!("rank {} of {n}", r.numerical_rank));
    Ok(EquationReport { eq43, eq44, eq45, eq46 })
}

pub fn check_h6(cone0: &ConeGenerators, cone1: &ConeGenerators) -> Check {
    Check::automatic(format!(
        "nonempty relative interior in finite dimension; hull dimensions {} and {}",
        cone0.hull_dimension(),
        cone1.hull_dimension()
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub horizon_cap: usize,
    pub h1: Check,
    pub h2: Check,
    pub h3: Check,
    pub h4: Vec<StageCheck>,
    pub h5: Check,
    pub h6: Check,
    #[serde(flatten)]
    pub equations: EquationReport,
}

impl HypothesisReport {
    /// Names of failing checks, e.g. `H4(2)` or `eq44(3)`.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, c) in [("H1", &self.h1), ("H2", &self.h2), ("H3", &self.h3), ("H5", &self.h5), ("H6", &self.h6)] {
            if c.verdict.is_fail() {
                out.push(name.to_string());
            }
        }
        for (name, list) in [
            ("H4", &self.h4),
            ("eq43", &self.equations.eq43),
            ("eq44", &self.equations.eq44),
            ("eq45", &self.equations.eq45),
        ] {
            out.extend(list.iter().filter(|s| s.check.verdict.is_fail()).map(|s| format!("{name}({})", s.t)));
        }
        if self.equations.eq46.verdict.is_fail() {
            out.push("eq46".into());
        }
        out
    }

    pub fn all_pass(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn h4_at(&self, t: usize) -> Option<&Check> {
        self.h4.iter().find(|s| s.t == t).map(|s| &s.check)
    }

    /// (4.3) and (4.4) hold at every examined stage up to `h`.
    pub fn range_conditions_hold_to(&self, h: usize) -> bool {
        let ok = |l: &[StageCheck]| l.iter().filter(|s| s.t <= h).all(|s| !s.check.verdict.is_fail());
        ok(&self.equations.eq43) && ok(&self.equations.eq44)
    }
}

/// Runs every check at stages `0..=horizon_cap` of the reference.
pub fn check_hypotheses(system: &ControlSystem, reference: &Process, horizon_cap: usize, rank_tol: f64) -> Result<HypothesisReport> {
    let cap = horizon_cap.max(2);
    reference.require(cap + 1)?;
    let supplied = linearize_range(system, reference, cap, Differentiation::Supplied);
    let (stages, h3) = match supplied {
        Ok(s) => (s, Check::new(true, None, "analytic derivatives supplied at every examined stage")),
        Err(Error::MissingDerivative(_)) => (
            linearize_range(system, reference, cap, Differentiation::Preferred)?,
            Check {
                verdict: Verdict::NotChecked,
                margin: None,
                note: "derivatives estimated by central differences; differentiability assumed".into(),
            },
        ),
        Err(e) => return Err(e),
    };
    let cones: Vec<ConeGenerators> = (0..=cap)
        .map(|t| Ok(system.control_set(t).tangent_cone(&reference.controls[t])?.recession_generators()))
        .collect::<Result<_>>()?;

    let inside = (0..=cap + 1).all(|t| system.state_domain(t).contains(&reference.states[t]));
    let open_note = match system.state_domain(0) {
        StateDomain::AllSpace => "state domains are open by construction",
        StateDomain::OpenBox { .. } => "state domains are open boxes; control sets are polyhedral",
    };
    let h2 = Check::new(
        inside,
        None,
        if inside { open_note.to_string() } else { "reference leaves the state domain".to_string() },
    );

    let mut h4 = Vec::new();
    for t in 2..=cap {
        let rep = check_h4(&stages[t - 1], &stages[t], &cones[t], rank_tol)?;
        h4.push(StageCheck {
            t,
            check: Check::new(rep.pass, rep.margin(), format!("subspace rank {}", rep.subspace_rank)),
        });
    }
    let rep5 = check_h5(&stages[0], &stages[1], &cones[0], &cones[1], rank_tol)?;
    let h5 = Check::new(rep5.pass, rep5.margin(), format!("subspace rank {}", rep5.subspace_rank));
    Ok(HypothesisReport {
        horizon_cap: cap,
        h1: Check::automatic("finite-dimensional spaces are separable"),
        h2,
        h3,
        h4,
        h5,
        h6: check_h6(&cones[0], &cones[1]),
        equations: check_range_equations(&stages, rank_tol)?,
    })
}

/// Convenience with the default rank tolerance.
pub fn check_hypotheses_default(system: &ControlSystem, reference: &Process, horizon_cap: usize) -> Result<HypothesisReport> {
    check_hypotheses(system, reference, horizon_cap, DEFAULT_RANK_TOL)
}

/// Orthonormal basis of the span of a finitely generated cone's image.
pub fn image_span(m: &DMatrix<f64>, cone: &ConeGenerators) -> DMatrix<f64> {
    let (l, r) = cone_parts(m, cone);
    column_span(&hstack(m.nrows(), &[&l, &r]), DEFAULT_RANK_TOL)
}
