//! Constructive preimage bound for `Dg^h`: every `z` in its range has a preimage whose
//! block max-norm is at most `a_h · max_t ‖z_t‖`.

use super::ConstraintLinearization;
use crate::error::{Error, Result};
use crate::linalg::{hstack, spectral_norm};
use crate::operator::{least_norm_preimage, range_report, sum_of_ranges_equals, RangeTarget};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const DEFAULT_BOUND_SAMPLES: usize = 50;
const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct SampleCheck {
    /// `max(‖y_t‖, ‖v_t‖) / max_t ‖z_t‖`.
    pub ratio: f64,
    /// `‖Dg^h (y, v) − z‖`.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundCertificate {
    pub h: usize,
    /// `b_t = 1/σ_min([−I | B_t])` for the forward stages `t = 0..=h−2`.
    pub b: Vec<f64>,
    /// Forward constants `a_0..a_{h−2}`.
    pub a: Vec<f64>,
    /// `1 / (smallest positive singular value of Λ = [A_h B_{h−1} | B_h])`.
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub a_h: f64,
    pub samples: Vec<SampleCheck>,
    pub passed: bool,
}

impl BoundCertificate {
    pub fn max_ratio(&self) -> f64 {
        self.samples.iter().map(|s| s.ratio).fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.samples.iter().map(|s| s.residual).fold(0.0, f64::max)
    }
}

struct Construction<'a> {
    lin: &'a ConstraintLinearization,
    rank_tol: f64,
    /// `[−I | B_t]` for the forward stages.
    forward: Vec<DMatrix<f64>>,
    lambda: DMatrix<f64>,
}

impl<'a> Construction<'a> {
    fn new(lin: &'a ConstraintLinearization, rank_tol: f64) -> Self {
        let n = lin.state_dim;
        let h = lin.h;
        let neg = -DMatrix::<f64>::identity(n, n);
        let forward = (0..h.saturating_sub(1)).map(|t| hstack(n, &[&neg, &lin.stages[t].b])).collect();
        let ah_bprev = &lin.stages[h].a * &lin.stages[h - 1].b;
        let lambda = hstack(n, &[&ah_bprev, &lin.stages[h].b]);
        Self { lin, rank_tol, forward, lambda }
    }

    /// Returns `(y_1..y_h, v_0..v_h)` solving `Dg^h (y, v) = z`.
    fn preimage(&self, z: &[DVector<f64>]) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        let n = self.lin.state_dim;
        let m = self.lin.control_dim;
        let h = self.lin.h;
        let st = &self.lin.stages;
        // y[t] holds y_t; y_0 = 0 stands for the fixed initial state.
        let mut y = vec![DVector::zeros(n); h + 1];
        let mut v = vec![DVector::zeros(m); h + 1];
        for t in 0..h.saturating_sub(1) {
            let rhs = &z[t] - &st[t].a * &y[t];
            let (sol, _) = least_norm_preimage(&self.forward[t], &rhs, self.rank_tol)?;
            y[t + 1] = sol.rows(0, n).into_owned();
            v[t] = sol.rows(n, m).into_owned();
        }
        let yp = &y[h - 1];
        let rhs = &z[h] + &st[h].a * &z[h - 1] - &st[h].a * (&st[h - 1].a * yp);
        let (sol, _) = least_norm_preimage(&self.lambda, &rhs, self.rank_tol)?;
        v[h - 1] = sol.rows(0, m).into_owned();
        v[h] = sol.rows(m, m).into_owned();
        y[h] = &st[h - 1].b * &v[h - 1] + &st[h - 1].a * yp - &z[h - 1];
        Ok((y.split_off(1), v))
    }
}

/// Builds the constants and validates them on `samples` seeded random points of the range.
pub fn lemma42_bound(lin: &ConstraintLinearization, rank_tol: f64, samples: usize, seed: u64) -> Result<BoundCertificate> {
    let h = lin.h;
    let n = lin.state_dim;
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let st = &lin.stages;
    for t in 1..=h {
        let target = RangeTarget::RangeOf(hstack(n, &[&st[t].a, &st[t].b]));
        let rep = sum_of_ranges_equals(&(&st[t].a * &st[t - 1].b), &st[t].b, &target, rank_tol)?;
        if !rep.equal {
            return Err(Error::Hypothesis(format!(
                "range(A_{t} B_{}) + range(B_{t}) differs from range([A_{t} B_{t}]) (ranks {} vs {})",
                t - 1,
                rep.sum_rank,
                rep.target_rank
            )));
        }
    }
    let cons = Construction::new(lin, rank_tol);

    let mut b = Vec::new();
    let mut a: Vec<f64> = Vec::new();
    for t in 0..h.saturating_sub(1) {
        let bt = 1.0 / range_report(&cons.forward[t], rank_tol)?.constant();
        let at = if t == 0 {
            bt
        } else {
            a[t - 1].max(bt * (1.0 + a[t - 1] * spectral_norm(&st[t].a)))
        };
        b.push(bt);
        a.push(at);
    }
    // a_{h−2}; for h = 1 the stage before the terminal pair is the fixed initial state.
    let a_prev = if h >= 2 { a[h - 2] } else { 0.0 };
    let lam = range_report(&cons.lambda, rank_tol)?;
    if lam.numerical_rank == 0 {
        return Err(Error::Hypothesis("terminal operator Λ vanishes".into()));
    }
    let c = 1.0 / lam.constant();
    let ah = &st[h].a;
    let c1 = c * (1.0 + spectral_norm(ah) + a_prev * spectral_norm(&(ah * &st[h - 1].a)));
    let c2 = c1 * spectral_norm(&st[h - 1].b) + a_prev * spectral_norm(&st[h - 1].a) + 1.0;
    let a_h = a_prev.max(c1).max(c2);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = lin.assembled.ncols();
    let mut checks = Vec::with_capacity(samples);
    for _ in 0..samples {
        let w = DVector::from_fn(cols, |_, _| rng.gen_range(-1.0..1.0));
        let zs = &lin.assembled * w;
        let z: Vec<DVector<f64>> = (0..=h).map(|t| zs.rows(t * n, n).into_owned()).collect();
        let (y, v) = cons.preimage(&z)?;
        let mut stacked = DVector::zeros(cols);
        for (i, yi) in y.iter().enumerate() {
            stacked.rows_mut(i * n, n).copy_from(yi);
        }
        for (i, vi) in v.iter().enumerate() {
            stacked.rows_mut(h * n + i * lin.control_dim, lin.control_dim).copy_from(vi);
        }
        let residual = (&lin.assembled * &stacked - &zs).norm();
        let z_max = z.iter().map(|zt| zt.norm()).fold(0.0, f64::max);
        let sol_max = y.iter().chain(v.iter()).map(|s| s.norm()).fold(0.0, f64::max);
        let ratio = if z_max > 0.0 { sol_max / z_max } else { 0.0 };
        checks.push(SampleCheck { ratio, residual });
    }
    let passed = checks
        .iter()
        .all(|s| s.ratio <= a_h * (1.0 + 1e-12) && s.residual <= RESIDUAL_TOL);
    Ok(BoundCertificate {
        h,
        b,
        a,
        c,
        c1,
        c2,
        a_h,
        samples: checks,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::horizon::assemble_from_stages;
    use crate::linalg::DEFAULT_RANK_TOL;
    use crate::model::LinearizedStage;

    fn scalar(h: usize, a: f64, b: f64) -> ConstraintLinearization {
        let stages = (0..=h)
            .map(|t| LinearizedStage {
                t,
                a: DMatrix::from_element(1, 1, a),
                b: DMatrix::from_element(1, 1, b),
                c: DVector::zeros(1),
                d: DVector::zeros(1),
            })
            .collect();
        assemble_from_stages(h, stages).unwrap()
    }

    #[test]
    fn decoupled_scalar_stages() {
        for h in 1..6 {
            let cert = lemma42_bound(&scalar(h, 0.0, 1.0), DEFAULT_RANK_TOL, 50, 7).unwrap();
            assert!(cert.passed, "h={h}: {cert:?}");
        }
    }

    #[test]
    fn unit_scalar_h2_constants() {
        let cert = lemma42_bound(&scalar(2, 1.0, 1.0), DEFAULT_RANK_TOL, 50, 1).unwrap();
        let b0 = 1.0 / 2f64.sqrt();
        assert!((cert.a[0] - b0).abs() < 1e-14);
        // Λ = [1, 1] → c = 1/√2; c1 = c(1 + 1 + a_0), c2 = c1 + a_0 + 1
        let c1 = b0 * (2.0 + b0);
        assert!((cert.c1 - c1).abs() < 1e-14);
        assert!((cert.c2 - (c1 + b0 + 1.0)).abs() < 1e-14);
        assert!(cert.passed);
        assert!(cert.max_residual() < 1e-12);
    }

    #[test]
    fn hypothesis_failure_is_reported() {
        let mut lin = scalar(2, 1.0, 1.0);
        lin.stages[2].b[(0, 0)] = 0.0;
        lin.stages[1].b[(0, 0)] = 0.0;
        assert!(matches!(lemma42_bound(&lin, DEFAULT_RANK_TOL, 5, 1), Err(Error::Hypothesis(_))));
    }
}
