//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pontryagin::horizon::{assemble_constraints, compute_multipliers, truncate, ConstraintLinearization, MultiplierSet, SolveMode, TruncatedProblem};
use pontryagin::instances::InstanceBundle;
use pontryagin::model::{Differentiation, LinearizedStage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Solved {
    pub problem: TruncatedProblem,
    pub lin: ConstraintLinearization,
    pub ms: MultiplierSet,
}

pub fn solve(bundle: &InstanceBundle, h: usize) -> Solved {
    let problem = truncate(&bundle.system, &bundle.reference, h).unwrap();
    let lin = assemble_constraints(&problem, Differentiation::Preferred).unwrap();
    let ms = compute_multipliers(&problem, &lin, SolveMode::NormalFirst).unwrap();
    Solved { problem, lin, ms }
}

/// Stage data of a pinned LQ problem `max −½Σ w_t (xᵀQx + uᵀRu)`, `x_{t+1} = A_t x_t + B_t u_t`.
pub struct PinnedLq {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub sigma: DVector<f64>,
    pub terminal: DVector<f64>,
}

pub struct KktSolution {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    /// `p_1..p_{h+1}` from the dynamics rows.
    pub costates: Vec<DVector<f64>>,
    /// Multipliers of the fixed control coordinates, in the order given.
    pub bound_multipliers: Vec<f64>,
    pub objective: f64,
}

impl PinnedLq {
    pub fn horizon(&self) -> usize {
        self.a.len() - 1
    }

    /// Dense KKT solve with the control coordinates in `fixed` held at the given values.
    /// Variables are `(x_1..x_h, u_0..u_h)`; with `L = φ + Σ p_{t+1}ᵀ(A x + B u − x_{t+1})`.
    pub fn kkt(&self, fixed: &[(usize, usize, f64)]) -> Option<KktSolution> {
        let h = self.horizon();
        let n = self.sigma.len();
        let m = self.r.nrows();
        let nx = h * n;
        let nv = nx + (h + 1) * m;
        let nc = (h + 1) * n;
        let nf = fixed.len();
        let size = nv + nc + nf;
        let xi = |t: usize| (t - 1) * n;
        let ui = |t: usize| nx + t * m;
        let mut k = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        for t in 1..=h {
            let blk = &self.q * self.weights[t];
            k.view_mut((xi(t), xi(t)), (n, n)).copy_from(&(-blk));
        }
        for t in 0..=h {
            let blk = &self.r * self.weights[t];
            k.view_mut((ui(t), ui(t)), (m, m)).copy_from(&(-blk));
        }
        for t in 0..=h {
            let row = nv + t * n;
            // G y = g, and Gᵀ in the stationarity block
            let mut put = |r0: usize, c0: usize, blk: &DMatrix<f64>| {
                k.view_mut((r0, c0), blk.shape()).copy_from(blk);
                k.view_mut((c0, r0), (blk.ncols(), blk.nrows())).copy_from(&blk.transpose());
            };
            if t >= 1 {
                put(row, xi(t), &self.a[t]);
            }
            put(row, ui(t), &self.b[t]);
            if t < h {
                put(row, xi(t + 1), &-DMatrix::<f64>::identity(n, n));
            }
            let mut g = DVector::zeros(n);
            if t == 0 {
                g -= &self.a[0] * &self.sigma;
            }
            if t == h {
                g += &self.terminal;
            }
            rhs.rows_mut(row, n).copy_from(&g);
        }
        for (j, &(t, i, v)) in fixed.iter().enumerate() {
            let row = nv + nc + j;
            k[(row, ui(t) + i)] = 1.0;
            k[(ui(t) + i, row)] = 1.0;
            rhs[row] = v;
        }
        let sol = k.lu().solve(&rhs)?;
        let mut states = vec![self.sigma.clone()];
        states.extend((1..=h).map(|t| sol.rows(xi(t), n).into_owned()));
        states.push(self.terminal.clone());
        let controls: Vec<DVector<f64>> = (0..=h).map(|t| sol.rows(ui(t), m).into_owned()).collect();
        let costates = (0..=h).map(|t| sol.rows(nv + t * n, n).into_owned()).collect();
        let bound_multipliers = (0..nf).map(|j| sol[nv + nc + j]).collect();
        let objective = (0..=h)
            .map(|t| -0.5 * self.weights[t] * ((states[t].transpose() * &self.q * &states[t])[0] + (controls[t].transpose() * &self.r * &controls[t])[0]))
            .sum();
        Some(KktSolution { states, controls, costates, bound_multipliers, objective })
    }

    /// Brute force over every active-bound pattern of a box `[lo, hi]` on all controls:
    /// the best KKT point that is primal feasible with correctly signed bound multipliers.
    pub fn box_qp(&self, lo: f64, hi: f64) -> Option<KktSolution> {
        let h = self.horizon();
        let m = self.r.nrows();
        let coords: Vec<(usize, usize)> = (0..=h).flat_map(|t| (0..m).map(move |i| (t, i))).collect();
        let patterns = 3usize.pow(coords.len() as u32);
        let mut best: Option<KktSolution> = None;
        for code in 0..patterns {
            let mut c = code;
            let mut fixed = Vec::new();
            for &(t, i) in &coords {
                match c % 3 {
                    1 => fixed.push((t, i, lo)),
                    2 => fixed.push((t, i, hi)),
                    _ => {}
                }
                c /= 3;
            }
            let Some(s) = self.kkt(&fixed) else { continue };
            if s.controls.iter().flatten().any(|&u| u < lo - 1e-9 || u > hi + 1e-9) {
                continue;
            }
            // gradient of the objective along a fixed coordinate is −κ: ≥ 0 at the upper bound, ≤ 0 at the lower
            let signs_ok = fixed.iter().zip(&s.bound_multipliers).all(|(&(_, _, v), &kappa)| if v == hi { kappa <= 1e-9 } else { kappa >= -1e-9 });
            if !signs_ok {
                continue;
            }
            if best.as_ref().map_or(true, |b| s.objective > b.objective) {
                best = Some(s);
            }
        }
        best
    }
}

/// Pinned LQ data read off a bundle with linear dynamics and quadratic reward.
pub fn pinned_from_stages(stages: &[LinearizedStage], bundle: &InstanceBundle, h: usize) -> PinnedLq {
    use pontryagin::instances::RewardDef;
    let n = bundle.system.state_dim();
    let m = bundle.system.control_dim();
    let (q, r) = match &bundle.def.reward {
        RewardDef::Quadratic { q, r } => (
            DMatrix::from_row_iterator(n, n, q.iter().flatten().cloned()),
            DMatrix::from_row_iterator(m, m, r.iter().flatten().cloned()),
        ),
        _ => panic!("not quadratic"),
    };
    PinnedLq {
        a: stages[..=h].iter().map(|s| s.a.clone()).collect(),
        b: stages[..=h].iter().map(|s| s.b.clone()).collect(),
        q,
        r,
        weights: (0..=h).map(|t| bundle.def.discount.powi(t as i32)).collect(),
        sigma: bundle.reference.states[0].clone(),
        terminal: bundle.reference.states[h + 1].clone(),
    }
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Maximizer of a unimodal function on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Value of the pinned growth problem `max Σ_{t≤h} β^t ln c_t`, `x_{t+1} = x_t^α − c_t`,
/// `x_{h+1} = terminal`, by nested golden-section search over `c_0..c_{h−1}` (the last
/// consumption is implied by the pin). Returns `(value, consumptions)`.
pub fn growth_value(alpha: f64, beta: f64, x0: f64, terminal: f64, h: usize) -> (f64, Vec<f64>) {
    fn rec(alpha: f64, beta: f64, x: f64, terminal: f64, t: usize, h: usize) -> (f64, Vec<f64>) {
        let y = x.powf(alpha);
        if t == h {
            let c = y - terminal;
            let v = if c > 0.0 { beta.powi(t as i32) * c.ln() } else { f64::NEG_INFINITY };
            return (v, vec![c]);
        }
        let value = |c: f64| {
            let (v, _) = rec(alpha, beta, y - c, terminal, t + 1, h);
            beta.powi(t as i32) * c.ln() + v
        };
        let (c, _) = golden_max(value, 1e-9, y - 1e-9, 1e-13);
        let (v, mut rest) = rec(alpha, beta, y - c, terminal, t + 1, h);
        rest.insert(0, c);
        (beta.powi(t as i32) * c.ln() + v, rest)
    }
    rec(alpha, beta, x0, terminal, 0, h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random matrix of the given rank (product of random factors).
pub fn random_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: usize) -> DMatrix<f64> {
    if rank == 0 {
        return DMatrix::zeros(rows, cols);
    }
    random_matrix(rng, rows, rank) * random_matrix(rng, rank, cols)
}

pub fn stage(t: usize, a: DMatrix<f64>, b: DMatrix<f64>) -> LinearizedStage {
    let (n, m) = (a.nrows(), b.ncols());
    LinearizedStage { t, a, b, c: DVector::zeros(n), d: DVector::zeros(m) }
}
