//! Horizon sweeps of normalized multipliers and the diagnostics around their limits.

use crate::error::{Error, Result};
use crate::horizon::{
    assemble_from_stages, compute_multipliers_with, restricted_norm, truncate, MultiplierSet, Normalization, SolveMode,
    DEFAULT_VI_TOL,
};
use crate::linalg::{hstack, DEFAULT_RANK_TOL};
use crate::lp::conic_least_squares;
use crate::model::{linearize_range, ControlSystem, Differentiation, LinearizedStage, Process};
use crate::sets::ConeGenerators;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Normalization constants at or below this are degenerate.
pub const DEGENERATE_THETA: f64 = 1e-12;
/// Residual accepted for a decomposition witness.
pub const DECOMPOSITION_TOL: f64 = 1e-8;

/// Divides `(λ0, p)` by `θ = λ0 + ‖(q1, q2)|_Σ‖`, with `Σ = span T_0 × span T_1`.
pub fn normalize(ms: &MultiplierSet, cone0: &ConeGenerators, cone1: &ConeGenerators) -> Result<MultiplierSet> {
    let theta = ms.lambda0 + restricted_norm(&ms.q1, &ms.q2, cone0, cone1);
    if !(theta > DEGENERATE_THETA) {
        return Err(Error::DegenerateMultiplier(theta));
    }
    let mut out = ms.scaled(1.0 / theta);
    out.normalization = Normalization::Normalized;
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub mode: SolveMode,
    pub rank_tol: f64,
    pub vi_tol: f64,
    /// Tail differences at or below this make a costate series Cauchy.
    pub cauchy_tol: f64,
    pub differentiation: Differentiation,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            mode: SolveMode::NormalFirst,
            rank_tol: DEFAULT_RANK_TOL,
            vi_tol: DEFAULT_VI_TOL,
            cauchy_tol: 1e-6,
            differentiation: Differentiation::Preferred,
        }
    }
}

/// Normalized multipliers at one horizon with their residuals.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub h: usize,
    pub multipliers: MultiplierSet,
    /// `‖(q1, q2)|_Σ‖`.
    pub restricted_norm: f64,
    /// Adjoint residuals for `t = 1..=h`.
    pub adjoint_residuals: Vec<f64>,
    /// Variational-inequality violations on cone generators for `t = 0..=h`.
    pub vi_violations: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostateSeries {
    pub t: usize,
    /// `(h, ‖p_t^{h+1} − p_t^h‖)` over consecutive computed horizons.
    pub differences: Vec<(usize, f64)>,
    pub cauchy: bool,
}

#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub horizons: Vec<usize>,
    pub entries: Vec<SweepEntry>,
    /// Horizons without a multiplier, with the reason.
    pub gaps: Vec<(usize, String)>,
    pub t_max: usize,
    pub per_t: Vec<CostateSeries>,
    /// `λ0` and `p_1..p_{t_max}` at the largest computed horizon.
    pub limit_lambda0: f64,
    pub limit_costates: Vec<DVector<f64>>,
    /// `λ0 + ‖(q1, q2)|_Σ‖` at the largest horizon.
    pub nontriviality_margin: f64,
    /// `λ0 + ‖p_1‖ + ‖p_2‖` at the largest horizon.
    pub limit_margin: f64,
    pub stage0: LinearizedStage,
    pub stage1: LinearizedStage,
    pub cone0: ConeGenerators,
    pub cone1: ConeGenerators,
}

impl SweepRecord {
    pub fn entry(&self, h: usize) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.h == h)
    }
}

/// Normalized multipliers for `h = 2..=h_max` and per-`t` convergence diagnostics.
pub fn sweep(system: &ControlSystem, reference: &Process, h_max: usize, t_max: usize, opts: SweepOptions) -> Result<SweepRecord> {
    if h_max < 3 {
        return Err(Error::InvalidArgument("h_max must be at least 3".into()));
    }
    if t_max == 0 || t_max > h_max - 1 {
        return Err(Error::InvalidArgument(format!("t_max must lie in 1..={}", h_max - 1)));
    }
    truncate(system, reference, h_max)?;
    let stages = linearize_range(system, reference, h_max, opts.differentiation)?;
    let cones: Vec<ConeGenerators> = (0..=h_max)
        .map(|t| Ok(system.control_set(t).tangent_cone(&reference.controls[t])?.recession_generators()))
        .collect::<Result<_>>()?;

    let results: Vec<(usize, Result<SweepEntry>)> = (2..=h_max)
        .into_par_iter()
        .map(|h| (h, sweep_entry(h, &stages, &cones, opts)))
        .collect();
    let mut entries = Vec::new();
    let mut gaps = Vec::new();
    for (h, r) in results {
        match r {
            Ok(e) => entries.push(e),
            Err(e) => {
                log::warn!("no multiplier at horizon {h}: {e}");
                gaps.push((h, e.to_string()));
            }
        }
    }
    let Some(last) = entries.last() else {
        return Err(Error::NoMultiplier { h: h_max, normal: f64::NAN, abnormal: f64::NAN });
    };

    let per_t = (1..=t_max)
        .map(|t| {
            let differences: Vec<(usize, f64)> = entries
                .windows(2)
                .filter(|w| w[1].h == w[0].h + 1 && t <= w[0].h + 1)
                .map(|w| (w[0].h, (w[1].multipliers.p_at(t) - w[0].multipliers.p_at(t)).norm()))
                .collect();
            let tail = &differences[differences.len() - differences.len().div_ceil(4)..];
            let cauchy = !tail.is_empty() && tail.iter().all(|(_, d)| *d <= opts.cauchy_tol);
            CostateSeries { t, differences, cauchy }
        })
        .collect();

    let lm = &last.multipliers;
    Ok(SweepRecord {
        horizons: entries.iter().map(|e| e.h).collect(),
        gaps,
        t_max,
        per_t,
        limit_lambda0: lm.lambda0,
        limit_costates: (1..=t_max.min(lm.h + 1)).map(|t| lm.p_at(t).clone()).collect(),
        nontriviality_margin: lm.lambda0 + last.restricted_norm,
        limit_margin: lm.lambda0 + lm.p_at(1).norm() + lm.p_at(2).norm(),
        stage0: stages[0].clone(),
        stage1: stages[1].clone(),
        cone0: cones[0].clone(),
        cone1: cones[1].clone(),
        entries,
    })
}

fn sweep_entry(h: usize, stages: &[LinearizedStage], cones: &[ConeGenerators], opts: SweepOptions) -> Result<SweepEntry> {
    let lin = assemble_from_stages(h, stages[..=h].to_vec())?;
    let raw = compute_multipliers_with(&lin, &cones[..=h], opts.mode, opts.vi_tol)?;
    let ms = normalize(&raw, &cones[0], &cones[1])?;
    Ok(SweepEntry {
        h,
        restricted_norm: restricted_norm(&ms.q1, &ms.q2, &cones[0], &cones[1]),
        adjoint_residuals: ms.adjoint_residuals(&lin.stages),
        vi_violations: ms.vi_violations(&lin.stages, &cones[..=h]),
        multipliers: ms,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundConstants {
    /// False when some `λ0^h` vanishes (abnormal branch): the bound does not apply.
    pub applicable: bool,
    /// `sup_h (p_1^h(z0) + p_2^h(z1)) / λ0^h` per sample pair.
    pub constants: Vec<f64>,
    /// Spread of the per-`h` ratios over the last quarter of the sweep, per sample pair.
    pub tail_variation: Vec<f64>,
    pub finite: bool,
    pub note: String,
}

/// Empirical constants `c_{z0,z1}` with `p_1^h(z0) + p_2^h(z1) ≤ c λ0^h` across the sweep.
pub fn check_prop45_6(record: &SweepRecord, samples: &[(DVector<f64>, DVector<f64>)]) -> BoundConstants {
    if record.entries.iter().any(|e| e.multipliers.lambda0 <= DEGENERATE_THETA) {
        return BoundConstants {
            applicable: false,
            constants: Vec::new(),
            tail_variation: Vec::new(),
            finite: true,
            note: "abnormal branch (λ0 = 0 at some horizon): bound not applicable".into(),
        };
    }
    let mut constants = Vec::with_capacity(samples.len());
    let mut tail_variation = Vec::with_capacity(samples.len());
    for (z0, z1) in samples {
        let ratios: Vec<f64> = record
            .entries
            .iter()
            .map(|e| (e.multipliers.p_at(1).dot(z0) + e.multipliers.p_at(2).dot(z1)) / e.multipliers.lambda0)
            .collect();
        constants.push(ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let tail = &ratios[ratios.len() - ratios.len().div_ceil(4)..];
        let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
        tail_variation.push(hi - lo);
    }
    let finite = constants.iter().all(|c| c.is_finite());
    BoundConstants {
        applicable: true,
        constants,
        tail_variation,
        finite,
        note: "supremum over the computed horizons only".into(),
    }
}

/// Seeded samples `(B_0 ζ0, B_1 ζ1)` with `ζi` drawn from the tangent cones.
pub fn sample_z_pairs(record: &SweepRecord, count: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let z0 = &record.stage0.b * record.cone0.sample(&mut rng);
            let z1 = &record.stage1.b * record.cone1.sample(&mut rng);
            (z0, z1)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionWitness {
    pub v: Vec<f64>,
    pub zeta0: Vec<f64>,
    pub zeta1: Vec<f64>,
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub residual: f64,
    /// Coefficients of the cone rays used; all nonnegative.
    pub ray_coefficients: Vec<f64>,
}

/// Finds `ζ0 ∈ T_0`, `ζ1 ∈ T_1` with `v = A_1 B_0 ζ0 + B_1 ζ1`.
pub fn decompose_v(
    v: &DVector<f64>,
    lin0: &LinearizedStage,
    lin1: &LinearizedStage,
    cone0: &ConeGenerators,
    cone1: &ConeGenerators,
) -> Result<DecompositionWitness> {
    let n = lin1.a.nrows();
    if v.len() != n || cone0.dim != lin0.b.ncols() || cone1.dim != lin1.b.ncols() {
        return Err(Error::Dimension("decomposition inputs".into()));
    }
    let m0 = &lin1.a * &lin0.b;
    let r0 = cone0.ray_matrix();
    let r1 = cone1.ray_matrix();
    let free = hstack(n, &[&(&m0 * &cone0.lineality), &(&lin1.b * &cone1.lineality)]);
    let nonneg = hstack(n, &[&(&m0 * &r0), &(&lin1.b * &r1)]);
    let fit = conic_least_squares(&free, &nonneg, v);
    let l0 = cone0.lineality.ncols();
    let k0 = r0.ncols();
    let zeta0 = &cone0.lineality * fit.free.rows(0, l0) + &r0 * fit.nonneg.rows(0, k0);
    let zeta1 = &cone1.lineality * fit.free.rows(l0, cone1.lineality.ncols()) + &r1 * fit.nonneg.rows(k0, r1.ncols());
    let z0 = &lin0.b * &zeta0;
    let z1 = &lin1.b * &zeta1;
    let residual = (v - &lin1.a * &z0 - &z1).norm();
    if residual > DECOMPOSITION_TOL {
        return Err(Error::Decomposition(residual));
    }
    let to_vec = |x: &DVector<f64>| x.iter().cloned().collect::<Vec<f64>>();
    Ok(DecompositionWitness {
        v: to_vec(v),
        zeta0: to_vec(&zeta0),
        zeta1: to_vec(&zeta1),
        z0: to_vec(&z0),
        z1: to_vec(&z1),
        residual,
        ray_coefficients: to_vec(&fit.nonneg),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SubspaceNormReport {
    /// `(h, λ0^h, ‖(q1^h, q2^h)|_Σ‖)`.
    pub per_h: Vec<(usize, f64, f64)>,
    /// Largest `|λ0^h + norm − 1|`.
    pub identity_error: f64,
    /// The normalization identity holds at every horizon, so the two limits cannot both vanish.
    pub identity_holds: bool,
    pub lambda0_trend: Trend,
    pub norm_trend: Trend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    ToZero,
    ToOne,
    Other,
}

fn trend(values: &[f64]) -> Trend {
    let tail = &values[values.len() - values.len().div_ceil(4)..];
    if tail.iter().all(|v| v.abs() <= 1e-9) {
        Trend::ToZero
    } else if tail.iter().all(|v| (v - 1.0).abs() <= 1e-9) {
        Trend::ToOne
    } else {
        Trend::Other
    }
}

/// The restricted dual-norm sequence of `(q1^h, q2^h)` on `Σ` with `Σ` from `basis0 × basis1`.
pub fn subspace_norm_convergence(record: &SweepRecord, basis0: &DMatrix<f64>, basis1: &DMatrix<f64>) -> SubspaceNormReport {
    let per_h: Vec<(usize, f64, f64)> = record
        .entries
        .iter()
        .map(|e| {
            let m = &e.multipliers;
            let norm = (basis0.transpose() * &m.q1).norm().hypot((basis1.transpose() * &m.q2).norm());
            (e.h, m.lambda0, norm)
        })
        .collect();
    let identity_error = per_h.iter().map(|(_, l, q)| (l + q - 1.0).abs()).fold(0.0, f64::max);
    let lambdas: Vec<f64> = per_h.iter().map(|x| x.1).collect();
    let norms: Vec<f64> = per_h.iter().map(|x| x.2).collect();
    SubspaceNormReport {
        identity_error,
        identity_holds: identity_error <= 1e-10,
        lambda0_trend: trend(&lambdas),
        norm_trend: trend(&norms),
        per_h,
    }
}

/// Seeded random state vectors with entries in `[−1, 1]`.
pub fn sample_vectors(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0))).collect()
}
