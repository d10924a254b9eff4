//! Built-in fixtures and problem-file ingestion.

mod format;
mod riccati;

pub use format::{
    DynamicsDef, OracleKind, ProblemDef, ReferenceDef, RewardDef, SetDef, SetScheduleDef, StageMapDef, StateDomainDef, FORMAT_VERSION,
};
pub use riccati::{box_qp, dare, pinned_lq, riccati_oracle, riccati_step, LqSolution};

use crate::error::{Error, Result};
use crate::hypotheses::HypothesisReport;
use crate::model::{ControlSystem, Process};
use format::{matrix_rows, vec_of};
use nalgebra::{DMatrix, DVector};
use std::path::Path;

pub const BUILTIN_NAMES: [&str; 5] = ["lq-stable", "lq-boundary-control", "ramsey-growth", "inert-control-abnormal", "rank-deficient-H4-fail"];

/// Number of reference controls materialized for every builtin.
pub const BUILTIN_LENGTH: usize = 80;

/// Which hypothesis-checker failures a fixture is designed to produce.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisProfile {
    /// Checks that must fail, e.g. `H4(2)`.
    pub must_fail: Vec<String>,
    /// Name prefixes of further checks allowed to fail, e.g. `eq44(`.
    pub may_fail: Vec<String>,
}

impl HypothesisProfile {
    pub fn clean() -> Self {
        HypothesisProfile { must_fail: Vec::new(), may_fail: Vec::new() }
    }

    /// Failures of the report not permitted by the profile, plus required failures that did not occur.
    pub fn mismatches(&self, report: &HypothesisReport) -> Vec<String> {
        let failures = report.failures();
        let mut out: Vec<String> = failures
            .iter()
            .filter(|f| !self.must_fail.contains(f) && !self.may_fail.iter().any(|p| f.starts_with(p.as_str())))
            .map(|f| format!("unexpected failure {f}"))
            .collect();
        out.extend(self.must_fail.iter().filter(|f| !failures.contains(f)).map(|f| format!("expected failure {f} did not occur")));
        out
    }
}

/// A system, its candidate optimum and how to check it independently.
#[derive(Clone)]
pub struct InstanceBundle {
    pub name: String,
    pub system: ControlSystem,
    pub reference: Process,
    pub oracle: OracleKind,
    pub notes: String,
    pub profile: HypothesisProfile,
    pub def: ProblemDef,
}

impl std::fmt::Debug for InstanceBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InstanceBundle")
            .field("name", &self.name)
            .field("oracle", &self.oracle)
            .field("stages", &self.reference.len())
            .finish()
    }
}

impl InstanceBundle {
    pub fn from_def(def: ProblemDef, path: &str) -> Result<Self> {
        let (system, reference) = def.build(path)?;
        Ok(InstanceBundle {
            name: def.name.clone(),
            system,
            reference,
            oracle: def.oracle,
            notes: def.notes.clone(),
            profile: HypothesisProfile::clean(),
            def,
        })
    }
}

pub fn builtin(name: &str) -> Result<InstanceBundle> {
    let (def, profile) = match name {
        "lq-stable" => (lq_stable()?, HypothesisProfile::clean()),
        "lq-boundary-control" => (lq_boundary_control()?, HypothesisProfile::clean()),
        "ramsey-growth" => (ramsey_growth(), HypothesisProfile::clean()),
        "inert-control-abnormal" => (
            inert_control_abnormal(),
            HypothesisProfile {
                must_fail: vec!["H5".into()],
                may_fail: vec!["H4(".into(), "eq44(".into(), "eq45(".into(), "eq46".into()],
            },
        ),
        "rank-deficient-H4-fail" => (
            rank_deficient()?,
            HypothesisProfile {
                must_fail: vec!["H4(2)".into(), "eq44(2)".into()],
                may_fail: vec!["eq45(".into()],
            },
        ),
        _ => return Err(Error::UnknownInstance(name.to_string())),
    };
    let mut bundle = InstanceBundle::from_def(def, &format!("builtin:{name}"))?;
    bundle.profile = profile;
    Ok(bundle)
}

/// Resolves a builtin name or a problem-file path.
pub fn resolve(name_or_path: &str) -> Result<InstanceBundle> {
    if BUILTIN_NAMES.contains(&name_or_path) {
        builtin(name_or_path)
    } else if Path::new(name_or_path).exists() {
        load(Path::new(name_or_path))
    } else {
        Err(Error::UnknownInstance(name_or_path.to_string()))
    }
}

pub fn load(path: &Path) -> Result<InstanceBundle> {
    InstanceBundle::from_def(ProblemDef::load(path)?, &path.display().to_string())
}

pub fn save(bundle: &InstanceBundle, path: &Path) -> Result<()> {
    std::fs::write(path, bundle.def.to_toml_string()?)?;
    Ok(())
}

fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

fn lq_base() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    (
        m(2, 2, &[1.1, 0.2, 0.0, 0.9]),
        m(2, 1, &[0.0, 1.0]),
        DMatrix::identity(2, 2),
        m(1, 1, &[0.5]),
        DVector::from_vec(vec![1.0, -0.5]),
    )
}

/// Rolls out `u_t = −K_t x_t` with per-stage gains (the last gain repeats).
fn closed_loop(a: &[DMatrix<f64>], b: &[DMatrix<f64>], gains: &[DMatrix<f64>], sigma: &DVector<f64>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let pick = |v: &[DMatrix<f64>], t: usize| v[t.min(v.len() - 1)].clone();
    let mut x = sigma.clone();
    let mut states = vec![vec_of(&x)];
    let mut controls = Vec::with_capacity(BUILTIN_LENGTH);
    for t in 0..BUILTIN_LENGTH {
        let u = -pick(gains, t) * &x;
        x = pick(a, t) * &x + pick(b, t) * &u;
        controls.push(vec_of(&u));
        states.push(vec_of(&x));
    }
    (states, controls)
}

fn lq_def(name: &str, notes: &str, oracle: OracleKind, sigma: &DVector<f64>, stages: Vec<StageMapDef>, tail: StageMapDef, q: &DMatrix<f64>, r: &DMatrix<f64>) -> ProblemDef {
    ProblemDef {
        format: FORMAT_VERSION,
        name: name.into(),
        notes: notes.into(),
        state_dim: q.nrows(),
        control_dim: r.nrows(),
        discount: 1.0,
        oracle,
        initial_state: vec_of(sigma),
        dynamics: DynamicsDef { stages, tail },
        reward: RewardDef::Quadratic { q: matrix_rows(q), r: matrix_rows(r) },
        state_domain: StateDomainDef::AllSpace,
        control_sets: SetScheduleDef::default(),
        reference: ReferenceDef { states: None, controls: Vec::new() },
    }
}

fn linear(a: &DMatrix<f64>, b: &DMatrix<f64>) -> StageMapDef {
    StageMapDef::Linear { a: matrix_rows(a), b: matrix_rows(b) }
}

fn lq_stable() -> Result<ProblemDef> {
    let (a, b, q, r, sigma) = lq_base();
    let (_, k) = dare(&a, &b, &q, &r)?;
    let (states, controls) = closed_loop(&[a.clone()], &[b.clone()], &[k], &sigma);
    let mut def = lq_def(
        "lq-stable",
        "x' = Ax + Bu, reward -(x'Qx + u'Ru)/2; reference is the infinite-horizon LQR feedback, closed-loop spectral radius about 0.81",
        OracleKind::Riccati,
        &sigma,
        Vec::new(),
        linear(&a, &b),
        &q,
        &r,
    );
    def.reference = ReferenceDef { states: Some(states), controls };
    Ok(def)
}

fn lq_boundary_control() -> Result<ProblemDef> {
    let a = m(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    let b = m(2, 2, &[0.1, 0.0, 0.05, 0.1]);
    let q = DMatrix::identity(2, 2);
    let r = DMatrix::identity(2, 2) * 0.2;
    let sigma = DVector::from_vec(vec![3.0, 1.0]);
    let bound = 6.0;
    let (p, k) = dare(&a, &b, &q, &r)?;
    // first control: minimize stage cost plus the unconstrained cost-to-go over the box
    let hm = &r + b.transpose() * &p * &b;
    let g = b.transpose() * &p * &a * &sigma;
    let lo = DVector::from_element(2, -bound);
    let u0 = box_qp(&hm, &g, &lo, &(-&lo))?;
    let x1 = &a * &sigma + &b * &u0;
    let (mut states, tail_controls) = closed_loop(&[a.clone()], &[b.clone()], &[k], &x1);
    states.insert(0, vec_of(&sigma));
    let mut controls = vec![vec_of(&u0)];
    controls.extend(tail_controls.into_iter().take(BUILTIN_LENGTH - 1));
    states.truncate(BUILTIN_LENGTH + 1);
    if controls[1..].iter().flatten().any(|u| u.abs() >= bound) {
        return Err(Error::InvalidArgument("lq-boundary-control: box active beyond stage 0".into()));
    }
    let mut def = lq_def(
        "lq-boundary-control",
        "double integrator with box |u_i| <= 6; the bound is active at stage 0 only, LQR feedback afterwards",
        OracleKind::BruteForceQp,
        &sigma,
        Vec::new(),
        linear(&a, &b),
        &q,
        &r,
    );
    def.control_sets = SetScheduleDef {
        stages: Vec::new(),
        tail: SetDef::Box { lower: vec![-bound; 2], upper: vec![bound; 2] },
    };
    def.reference = ReferenceDef { states: Some(states), controls };
    Ok(def)
}

pub const RAMSEY_ALPHA: f64 = 0.3;
pub const RAMSEY_BETA: f64 = 0.95;

fn ramsey_growth() -> ProblemDef {
    let (alpha, beta) = (RAMSEY_ALPHA, RAMSEY_BETA);
    let mut x: f64 = 0.5;
    let mut states = vec![vec![x]];
    let mut controls = Vec::with_capacity(BUILTIN_LENGTH);
    for _ in 0..BUILTIN_LENGTH {
        let y = x.powf(alpha);
        let c = (1.0 - alpha * beta) * y;
        x = y - c;
        controls.push(vec![c]);
        states.push(vec![x]);
    }
    ProblemDef {
        format: FORMAT_VERSION,
        name: "ramsey-growth".into(),
        notes: "capital x' = x^alpha - c, reward beta^t ln c, alpha = 0.3, beta = 0.95; optimal consumption (1 - alpha beta) x^alpha".into(),
        state_dim: 1,
        control_dim: 1,
        discount: beta,
        oracle: OracleKind::BruteForceNlp,
        initial_state: vec![0.5],
        dynamics: DynamicsDef { stages: Vec::new(), tail: StageMapDef::PowerGrowth { alpha } },
        reward: RewardDef::LogControl,
        state_domain: StateDomainDef::OpenBox { lower: vec![0.0], upper: vec![f64::INFINITY] },
        control_sets: SetScheduleDef {
            stages: Vec::new(),
            tail: SetDef::Box { lower: vec![0.0], upper: vec![f64::INFINITY] },
        },
        reference: ReferenceDef { states: Some(states), controls },
    }
}

fn inert_control_abnormal() -> ProblemDef {
    let half_line = SetDef::Box { lower: vec![0.0], upper: vec![f64::INFINITY] };
    ProblemDef {
        format: FORMAT_VERSION,
        name: "inert-control-abnormal".into(),
        notes: "x' = x + u for t < 2 with u >= 0, x' = x + u^2 afterwards; reward 1 - x + u. The linearized control is inert from stage 2 on, which forces lambda0 = 0".into(),
        state_dim: 1,
        control_dim: 1,
        discount: 1.0,
        oracle: OracleKind::None,
        initial_state: vec![1.0],
        dynamics: DynamicsDef {
            stages: vec![
                StageMapDef::Linear { a: vec![vec![1.0]], b: vec![vec![1.0]] },
                StageMapDef::Linear { a: vec![vec![1.0]], b: vec![vec![1.0]] },
            ],
            tail: StageMapDef::QuadraticInput { a: vec![vec![1.0]], w: vec![1.0] },
        },
        reward: RewardDef::Linear { c: vec![-1.0], d: vec![1.0], offset: 1.0 },
        state_domain: StateDomainDef::AllSpace,
        control_sets: SetScheduleDef { stages: vec![half_line.clone(), half_line], tail: SetDef::AllSpace },
        reference: ReferenceDef {
            states: Some(vec![vec![1.0]; BUILTIN_LENGTH + 1]),
            controls: vec![vec![0.0]; BUILTIN_LENGTH],
        },
    }
}

fn rank_deficient() -> Result<ProblemDef> {
    let (a, b, q, r, sigma) = lq_base();
    let a2 = m(2, 2, &[1.1, 0.0, 0.0, 0.0]);
    let (p_inf, k_inf) = dare(&a, &b, &q, &r)?;
    let (p2, k2) = riccati_step(&a2, &b, &q, &r, &p_inf)?;
    let (p1, k1) = riccati_step(&a, &b, &q, &r, &p2)?;
    let (_, k0) = riccati_step(&a, &b, &q, &r, &p1)?;
    let dyn_a = [a.clone(), a.clone(), a2.clone(), a.clone()];
    let (states, controls) = closed_loop(&dyn_a, &[b.clone()], &[k0, k1, k2, k_inf], &sigma);
    let mut def = lq_def(
        "rank-deficient-H4-fail",
        "lq-stable with A_2 = diag(1.1, 0), so A_2 B_1 = 0 and B_2 alone cannot fill the state space at stage 2",
        OracleKind::Riccati,
        &sigma,
        vec![linear(&a, &b), linear(&a, &b), linear(&a2, &b)],
        linear(&a, &b),
        &q,
        &r,
    );
    def.reference = ReferenceDef { states: Some(states), controls };
    Ok(def)
}
