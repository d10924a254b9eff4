mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use pontryagin::families::{DiscountedReward, RewardMap, ScheduledDynamics, StageMap};
use pontryagin::horizon::{
    assemble_constraints, assemble_from_stages, check_closedness_surjectivity, compute_multipliers, compute_multipliers_with, truncate, Branch,
    SolveMode, DEFAULT_VI_TOL,
};
use pontryagin::hypotheses::{check_h4, cone_sum_covers_space};
use pontryagin::instances::{builtin, pinned_lq};
use pontryagin::limits::normalize;
use pontryagin::linalg::numerical_rank;
use pontryagin::lp::{LinearProgram, LpOutcome};
use pontryagin::model::{compare_processes, linearize, simulate, ControlSystem, Differentiation, Process};
use pontryagin::operator::{least_norm_preimage, range_report};
use pontryagin::sets::{ConeGenerators, ConvexSet};
use pontryagin::verify::{max_over_control_set, verify, verify_multipliers, Tolerances};
use proptest::prelude::*;
use rand::Rng;
use std::sync::Arc;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=3, 1usize..=2)
}

fn lq_system(a: &DMatrix<f64>, b: &DMatrix<f64>) -> ControlSystem {
    let (n, m) = (a.nrows(), b.ncols());
    let dyn_ = ScheduledDynamics::stationary(StageMap::Linear { a: a.clone(), b: b.clone() });
    let reward = DiscountedReward {
        base: RewardMap::Quadratic { q: DMatrix::identity(n, n), r: DMatrix::identity(m, m) },
        discount: 1.0,
    };
    ControlSystem::new(n, m, Arc::new(dyn_), Arc::new(reward)).unwrap()
}

/// A random LQ system with the pinned optimum for horizon `h` as reference.
fn optimal_lq(seed: u64, n: usize, m: usize, h: usize) -> (ControlSystem, Process) {
    let mut rng = rng(seed);
    let a = random_matrix(&mut rng, n, n);
    let b = random_matrix(&mut rng, n, m) + DMatrix::from_fn(n, m, |i, j| if i == j { 1.0 } else { 0.0 });
    let sigma = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let xf = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let q = vec![DMatrix::identity(n, n); h + 1];
    let r = vec![DMatrix::identity(m, m); h + 1];
    let sol = pinned_lq(&vec![a.clone(); h + 1], &vec![b.clone(); h + 1], &q, &r, &sigma, &xf).unwrap();
    let sys = lq_system(&a, &b);
    let proc_ = simulate(&sys, &sigma, &sol.controls, h).unwrap();
    (sys, proc_)
}

fn random_box(rng: &mut rand_chacha::ChaCha8Rng, m: usize) -> ConvexSet {
    let lo = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..0.0));
    let hi = DVector::from_fn(m, |i, _| lo[i] + rng.gen_range(0.1..2.0));
    ConvexSet::new_box(lo, hi).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn simulate_then_reevaluate_is_exact(seed in any::<u64>(), (n, m) in dims(), h in 1usize..15) {
        let mut rng = rng(seed);
        let sys = lq_system(&random_matrix(&mut rng, n, n), &random_matrix(&mut rng, n, m));
        let controls: Vec<DVector<f64>> = (0..=h).map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let p = simulate(&sys, &DVector::from_element(n, 0.5), &controls, h).unwrap();
        for t in 0..=h {
            prop_assert_eq!(&p.states[t + 1], &sys.step(t, &p.states[t], &p.controls[t]));
        }
        let cmp = compare_processes(&sys, &p, &p, h, 1e-12).unwrap();
        prop_assert!(cmp.deltas.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn tangent_cones_are_cones(seed in any::<u64>(), m in 1usize..=3, corner in any::<bool>()) {
        let mut rng = rng(seed);
        let set = if corner { ConvexSet::simplex(m) } else { random_box(&mut rng, m) };
        let verts = set.vertices();
        // a vertex or an edge point, so that some constraints are active
        let u = if corner { verts[rng.gen_range(0..verts.len())].clone() } else { (&verts[0] + &verts[verts.len() - 1]) * 0.5 };
        let cone = set.tangent_cone(&u).unwrap();
        prop_assert!(cone.contains(&DVector::zeros(m)));
        let gens = cone.recession_generators();
        for _ in 0..20 {
            let d = gens.sample(&mut rng);
            prop_assert!(cone.contains(&d));
            let lambda = rng.gen_range(0.01..100.0);
            prop_assert!(cone.contains(&(&d * lambda)));
        }
    }

    #[test]
    fn interior_tangent_cone_is_all_space(seed in any::<u64>(), m in 1usize..=3) {
        let mut rng = rng(seed);
        let set = random_box(&mut rng, m);
        let verts = set.vertices();
        let centre = verts.iter().fold(DVector::zeros(m), |acc, v| acc + v) / verts.len() as f64;
        prop_assert!(set.tangent_cone(&centre).unwrap().is_all_space());
    }

    #[test]
    fn finite_differences_on_quadratics(seed in any::<u64>(), n in 1usize..=3, step_exp in 3i32..=4) {
        let mut rng = rng(seed);
        let step = 10f64.powi(-step_exp);
        let a = random_matrix(&mut rng, n, n);
        let w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let q = random_matrix(&mut rng, n, n);
        let q = &q * q.transpose();
        let dyn_ = ScheduledDynamics::stationary(StageMap::QuadraticInput { a, w });
        let reward = DiscountedReward { base: RewardMap::Quadratic { q, r: DMatrix::identity(n, n) }, discount: 1.0 };
        let sys = ControlSystem::new(n, n, Arc::new(dyn_), Arc::new(reward)).unwrap();
        let controls = vec![DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)); 2];
        let p = simulate(&sys, &DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)), &controls, 1).unwrap();
        let exact = linearize(&sys, &p, 0, Differentiation::Supplied).unwrap();
        let fd = linearize(&sys, &p, 0, Differentiation::CentralDifference { step }).unwrap();
        let bound = 10.0 * step * step;
        prop_assert!((&exact.a - &fd.a).amax() <= bound);
        prop_assert!((&exact.b - &fd.b).amax() <= bound);
        prop_assert!((&exact.c - &fd.c).amax() <= bound);
        prop_assert!((&exact.d - &fd.d).amax() <= bound);
    }

    #[test]
    fn preimages_and_constants(seed in any::<u64>(), rows in 1usize..=5, extra in 0usize..=3, rank_cut in 0usize..=2) {
        let mut rng = rng(seed);
        let cols = rows + extra;
        let rank = rows.saturating_sub(rank_cut).max(1);
        let m = random_rank(&mut rng, rows, cols, rank);
        let rep = range_report(&m, 1e-10).unwrap();
        let c = rep.constant();
        for alpha in [2.0, 10.0] {
            let scaled = range_report(&(&m * alpha), 1e-10).unwrap().constant();
            prop_assert!((scaled - alpha * c).abs() <= 1e-12 * alpha * c);
        }
        for _ in 0..10 {
            // consistent right-hand sides
            let x0 = DVector::from_fn(cols, |_, _| rng.gen_range(-1.0..1.0));
            let y = &m * x0;
            let (x, residual) = least_norm_preimage(&m, &y, 1e-10).unwrap();
            prop_assert!(residual <= 1e-9 && (&m * &x - &y).norm() <= 1e-9);
            prop_assert!(x.norm() * c <= y.norm() * (1.0 + 1e-9));
            if rep.surjective {
                let y = DVector::from_fn(rows, |_, _| rng.gen_range(-1.0..1.0));
                prop_assert!(least_norm_preimage(&m, &y, 1e-10).unwrap().1 <= 1e-9);
            }
        }
    }

    #[test]
    fn multipliers_satisfy_conditions_and_form_a_cone(seed in any::<u64>(), (n, m) in dims(), h in 2usize..8) {
        let (sys, proc_) = optimal_lq(seed, n, m, h);
        let problem = truncate(&sys, &proc_, h).unwrap();
        let lin = assemble_constraints(&problem, Differentiation::Supplied).unwrap();
        let cones = problem.cones().unwrap();
        let ms = compute_multipliers(&problem, &lin, SolveMode::NormalFirst).unwrap();
        prop_assert_eq!(ms.branch, Branch::Normal);
        for alpha in [1.0, 0.5, 2.0] {
            let s = ms.scaled(alpha);
            prop_assert!(s.adjoint_residuals(&lin.stages).iter().all(|r| *r <= 1e-8));
            prop_assert!(s.vi_violations(&lin.stages, &cones).iter().all(|v| *v <= 1e-8));
        }
        let raw = verify_multipliers(&sys, &proc_, &ms, Tolerances::default()).unwrap();
        prop_assert!(raw.pass);
        let normalized = normalize(&ms, &cones[0], &cones[1]).unwrap();
        let after = verify_multipliers(&sys, &proc_, &normalized, Tolerances::default()).unwrap();
        let flags = |r: &pontryagin::verify::VerificationReport| {
            [r.cond1_nontrivial.pass, r.cond2_sign.pass, r.cond3_adjoint.pass, r.cond4_variational.pass]
        };
        prop_assert_eq!(flags(&raw), flags(&after));
    }

    #[test]
    fn verify_is_homogeneous(seed in any::<u64>(), (n, m) in dims(), h in 2usize..6, noise in 0.0f64..1e-6, alpha in 0.01f64..100.0) {
        let (sys, proc_) = optimal_lq(seed, n, m, h);
        let problem = truncate(&sys, &proc_, h).unwrap();
        let lin = assemble_constraints(&problem, Differentiation::Supplied).unwrap();
        let ms = compute_multipliers(&problem, &lin, SolveMode::NormalFirst).unwrap();
        // perturb so that some verdicts may flip, then compare across scalings
        let p: Vec<DVector<f64>> = ms.p.iter().map(|v| v.map(|x| x + noise)).collect();
        let base = verify(&sys, &proc_, ms.lambda0, &p, h, Tolerances::default()).unwrap();
        let scaled: Vec<DVector<f64>> = p.iter().map(|v| v * alpha).collect();
        let other = verify(&sys, &proc_, ms.lambda0 * alpha, &scaled, h, Tolerances::default()).unwrap();
        prop_assert_eq!(base.pass, other.pass);
        prop_assert_eq!(base.first_failure, other.first_failure);
        prop_assert_eq!(base.cond3_adjoint.pass, other.cond3_adjoint.pass);
        prop_assert_eq!(base.cond4_variational.pass, other.cond4_variational.pass);
    }

    #[test]
    fn box_maximum_matches_lp(seed in any::<u64>(), m in 1usize..=4) {
        let mut rng = rng(seed);
        let set = random_box(&mut rng, m);
        let (lo, hi) = match &set { ConvexSet::Box { lower, upper } => (lower.clone(), upper.clone()), _ => unreachable!() };
        let g = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let u_hat = DVector::from_fn(m, |i, _| rng.gen_range(lo[i]..=hi[i]));
        let closed = max_over_control_set(&g, &set, &u_hat, 1e-12).unwrap().value;
        let mut a = DMatrix::zeros(2 * m, m);
        let mut b = DVector::zeros(2 * m);
        for i in 0..m {
            a[(i, i)] = 1.0;
            b[i] = hi[i];
            a[(m + i, i)] = -1.0;
            b[m + i] = -lo[i];
        }
        let poly = ConvexSet::new_half_spaces(a, b).unwrap();
        let lp = max_over_control_set(&g, &poly, &u_hat, 1e-12).unwrap().value;
        prop_assert!((closed - lp).abs() <= 1e-10, "{} vs {}", closed, lp);
    }

    #[test]
    fn h4_all_space_is_plain_rank(seed in any::<u64>(), n in 1usize..=4, m in 1usize..=3) {
        let mut rng = rng(seed);
        let deficient = rng.gen_bool(0.5);
        let (prev_b, a, b) = if deficient {
            let r = rng.gen_range(0..n);
            let basis = random_matrix(&mut rng, n, r.max(1));
            let pb = random_matrix(&mut rng, n, m);
            // A_t B_{t−1} and B_t both live in the same r-dimensional subspace
            let a = &basis * random_matrix(&mut rng, r.max(1), n) * if r == 0 { 0.0 } else { 1.0 };
            let b = &basis * random_matrix(&mut rng, r.max(1), m);
            (pb, a, b)
        } else {
            (random_matrix(&mut rng, n, m), random_matrix(&mut rng, n, n), random_matrix(&mut rng, n, m))
        };
        let prev = stage(0, DMatrix::identity(n, n), prev_b);
        let cur = stage(1, a, b);
        let all_space = ConeGenerators::of_polyhedral_cone(&DMatrix::zeros(0, m));
        let report = check_h4(&prev, &cur, &all_space, 1e-10).unwrap();
        let joint = pontryagin::linalg::hstack(n, &[&(&cur.a * &prev.b), &cur.b]);
        prop_assert_eq!(report.pass, numerical_rank(&joint, 1e-10) == n);
    }

    #[test]
    fn positive_spanning_pass_is_sound(seed in any::<u64>(), n in 1usize..=3, sub in 0usize..=1, k in 1usize..=6) {
        let mut rng = rng(seed);
        let subspace = random_matrix(&mut rng, n, sub.min(n));
        // a positive basis shifted at random sometimes spans, sometimes not
        let mut rays = random_matrix(&mut rng, n, k);
        if rng.gen_bool(0.5) {
            let sum = rays.column_sum();
            rays = pontryagin::linalg::hstack(n, &[&rays, &DMatrix::from_column_slice(n, 1, (-sum).as_slice())]);
        }
        let report = cone_sum_covers_space(&subspace, &rays, 1e-10).unwrap();
        if report.pass {
            let comp = &report.complement;
            let proj = &report.projected_rays;
            for _ in 0..200 {
                let z: DVector<f64> = DVector::from_fn(comp.ncols(), |_, _| rng.gen_range(-1.0..1.0));
                if z.norm() == 0.0 {
                    continue;
                }
                let v = &z / z.norm();
                let cols = proj.ncols();
                let mut lp = LinearProgram::minimize(vec![0.0; cols]);
                for j in 0..cols {
                    lp.set_bounds(j, 0.0, f64::INFINITY);
                }
                for i in 0..proj.nrows() {
                    lp.eq(proj.row(i).iter().cloned().collect(), v[i]);
                }
                match lp.solve().unwrap() {
                    LpOutcome::Optimal { x, .. } => {
                        let lam = DVector::from_vec(x);
                        prop_assert!((proj * lam - &v).norm() <= 1e-8);
                    }
                    other => prop_assert!(false, "{:?}", other),
                }
            }
        }
    }
}

#[test]
fn box_vertices_satisfy_variational_inequality() {
    let b = builtin("lq-boundary-control").unwrap();
    for h in 2..=10 {
        let problem = truncate(&b.system, &b.reference, h).unwrap();
        let lin = assemble_constraints(&problem, Differentiation::Supplied).unwrap();
        let ms = compute_multipliers(&problem, &lin, SolveMode::NormalFirst).unwrap();
        for t in 0..=h {
            let g = &lin.stages[t].d * ms.lambda0 + lin.stages[t].b.transpose() * ms.p_at(t + 1);
            for v in b.system.control_set(t).vertices() {
                assert!(g.dot(&(v - &b.reference.controls[t])) <= 1e-8, "h={h} t={t}");
            }
        }
    }
}

#[test]
fn surjectivity_is_monotone_on_stationary_fixtures() {
    for name in ["lq-stable", "ramsey-growth"] {
        let b = builtin(name).unwrap();
        let mut prev = None;
        for h in 1..=20 {
            let problem = truncate(&b.system, &b.reference, h).unwrap();
            let lin = assemble_constraints(&problem, Differentiation::Preferred).unwrap();
            let ok = check_closedness_surjectivity(&lin, 1e-10).unwrap().surjective;
            if prev == Some(true) {
                assert!(ok, "{name}: surjective at {} but not at {h}", h - 1);
            }
            prev = Some(ok);
        }
        assert_eq!(prev, Some(true));
    }
}

/// Smallest `a_t + b_t` with `‖p_t^h‖ ≤ a_t λ0^h + b_t ‖p_1^h‖` over the sweep horizons given.
fn costate_constants(norms: &[(f64, f64, f64)]) -> (f64, f64) {
    let mut lp = LinearProgram::minimize(vec![1.0, 1.0]);
    lp.set_bounds(0, 0.0, f64::INFINITY);
    lp.set_bounds(1, 0.0, f64::INFINITY);
    for &(pt, l0, p1) in norms {
        lp.ge(vec![l0, p1], pt);
    }
    match lp.solve().unwrap() {
        LpOutcome::Optimal { x, .. } => (x[0], x[1]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn costate_bounds_are_finite_and_stable() {
    for name in ["lq-stable", "lq-boundary-control", "ramsey-growth"] {
        let b = builtin(name).unwrap();
        let rec = pontryagin::limits::sweep(&b.system, &b.reference, 20, 6, Default::default()).unwrap();
        for t in 2..=6 {
            let norms = |hmax: usize| -> Vec<(f64, f64, f64)> {
                rec.entries
                    .iter()
                    .filter(|e| e.h >= t && e.h <= hmax)
                    .map(|e| (e.multipliers.p_at(t).norm(), e.multipliers.lambda0, e.multipliers.p_at(1).norm()))
                    .collect()
            };
            let (a15, b15) = costate_constants(&norms(15));
            let (a20, b20) = costate_constants(&norms(20));
            assert!(a20.is_finite() && b20.is_finite(), "{name} t={t}");
            assert!((a15 + b15 - a20 - b20).abs() <= 1e-6 * (1.0 + a20 + b20), "{name} t={t}");
        }
    }
}

#[test]
fn decomposition_witnesses_are_sound() {
    for name in ["lq-stable", "lq-boundary-control", "ramsey-growth", "inert-control-abnormal"] {
        let b = builtin(name).unwrap();
        let rec = pontryagin::limits::sweep(&b.system, &b.reference, 4, 2, Default::default()).unwrap();
        for v in pontryagin::limits::sample_vectors(b.system.state_dim(), 50, 11) {
            if let Ok(w) = pontryagin::limits::decompose_v(&v, &rec.stage0, &rec.stage1, &rec.cone0, &rec.cone1) {
                assert!(w.residual <= 1e-8);
                assert!(w.ray_coefficients.iter().all(|c| *c >= -1e-12), "{name}");
            }
        }
    }
}

#[test]
fn limit_nontriviality_margins() {
    for name in ["lq-stable", "lq-boundary-control", "ramsey-growth", "inert-control-abnormal", "rank-deficient-H4-fail"] {
        let b = builtin(name).unwrap();
        let rec = pontryagin::limits::sweep(&b.system, &b.reference, 12, 4, Default::default()).unwrap();
        let last = rec.entries.last().unwrap();
        let m = &last.multipliers;
        let margin = m.lambda0 + m.p_at(1).norm() + m.p_at(2).norm();
        assert!(margin > 0.0 && (margin - rec.limit_margin).abs() < 1e-12, "{name}");
        let b0 = pontryagin::linalg::spectral_norm(&rec.stage0.b);
        let b1 = pontryagin::linalg::spectral_norm(&rec.stage1.b);
        assert!(m.q1.norm() <= m.p_at(1).norm() * b0 * (1.0 + 1e-12) + 1e-15);
        assert!(m.q2.norm() <= m.p_at(2).norm() * b1 * (1.0 + 1e-12) + 1e-15);
        // λ0 + ‖(q1, q2)|_Σ‖ = 1 bounds the margin from below
        assert!(margin >= 1.0 / (1.0 + b0.max(b1)) - 1e-12, "{name}");
    }
}

#[test]
fn multipliers_from_explicit_stages_match_assembled_ones() {
    let b = builtin("lq-stable").unwrap();
    let problem = truncate(&b.system, &b.reference, 6).unwrap();
    let lin = assemble_constraints(&problem, Differentiation::Supplied).unwrap();
    let rebuilt = assemble_from_stages(6, lin.stages.clone()).unwrap();
    let cones = problem.cones().unwrap();
    let a = compute_multipliers_with(&lin, &cones, SolveMode::NormalFirst, DEFAULT_VI_TOL).unwrap();
    let c = compute_multipliers_with(&rebuilt, &cones, SolveMode::NormalFirst, DEFAULT_VI_TOL).unwrap();
    assert_eq!(a, c);
}
