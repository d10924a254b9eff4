//! Linear-quadratic solvers used to build references and as costate oracles.
//!
//! Minimization form throughout: cost `½ Σ (xᵀQ_t x + uᵀR_t u)` with `Q_t = β^t Q`, `R_t = β^t R`.
//! The maximization costates of the library are `p_t = −μ_t`.

use super::format::{OracleKind, RewardDef, StageMapDef};
use super::InstanceBundle;
use crate::error::{Error, Result};
use crate::linalg::from_rows;
use crate::sets::combinations;
use nalgebra::{DMatrix, DVector};

/// Stabilizing solution of the discrete algebraic Riccati equation and its gain `K`
/// (`u = −K x`), by fixed-point iteration.
pub fn dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let (next, _) = riccati_step(a, b, q, r, &p)?;
        let diff = (&next - &p).amax();
        p = next;
        if diff <= 1e-15 * (1.0 + p.amax()) {
            let (_, k) = riccati_step(a, b, q, r, &p)?;
            return Ok((p, k));
        }
    }
    Err(Error::InvalidArgument("Riccati iteration did not converge".into()))
}

/// One backward step: returns `(P_t, K_t)` from `P_{t+1}`.
pub fn riccati_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_next: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = r + b.transpose() * p_next * b;
    let k = s
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("R + BᵀPB is not positive definite".into()))?
        .solve(&(b.transpose() * p_next * a));
    let mut p = q + a.transpose() * p_next * (a - b * &k);
    p = (&p + p.transpose()) * 0.5;
    Ok((p, k))
}

/// Solution of the pinned-endpoint LQ problem.
#[derive(Debug, Clone)]
pub struct LqSolution {
    /// `x_0..x_{h+1}`.
    pub states: Vec<DVector<f64>>,
    /// `u_0..u_h`.
    pub controls: Vec<DVector<f64>>,
    /// Maximization costates `p_1..p_{h+1}`.
    pub costates: Vec<DVector<f64>>,
}

/// Boundary-value Riccati sweep for `min ½Σ_{t≤h}(xᵀQ_t x + uᵀR_t u)` subject to
/// `x_{t+1} = A_t x_t + B_t u_t`, `x_0 = σ`, `x_{h+1} = x_f`.
///
/// With `μ_t = P_t x_t + F_t ν` (ν the terminal multiplier) and `E_t = B_t R_t⁻¹ B_tᵀ`:
/// `P_t = Q_t + A_tᵀP_{t+1}M_tA_t`, `F_t = A_tᵀ(I + P_{t+1}E_t)⁻¹F_{t+1}`,
/// `W_t = W_{t+1} − F_{t+1}ᵀM_tE_tF_{t+1}` with `M_t = (I + E_tP_{t+1})⁻¹`,
/// and `x_f = F_0ᵀσ + W_0 ν`.
pub fn pinned_lq(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    q: &[DMatrix<f64>],
    r: &[DMatrix<f64>],
    sigma: &DVector<f64>,
    x_f: &DVector<f64>,
) -> Result<LqSolution> {
    let h = a.len() - 1;
    let n = sigma.len();
    let id = DMatrix::<f64>::identity(n, n);
    let inv = |m: DMatrix<f64>| m.try_inverse().ok_or_else(|| Error::InvalidArgument("singular Riccati factor".into()));
    let mut e = Vec::with_capacity(h + 1);
    for t in 0..=h {
        let r_inv = r[t]
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("R must be positive definite".into()))?
            .inverse();
        e.push(&b[t] * r_inv * b[t].transpose());
    }
    let mut p = vec![DMatrix::zeros(n, n); h + 2];
    let mut f = vec![DMatrix::zeros(n, n); h + 2];
    let mut m = vec![DMatrix::zeros(n, n); h + 1];
    f[h + 1] = id.clone();
    let mut w = DMatrix::zeros(n, n);
    for t in (0..=h).rev() {
        m[t] = inv(&id + &e[t] * &p[t + 1])?;
        w -= f[t + 1].transpose() * &m[t] * &e[t] * &f[t + 1];
        let pt = &q[t] + a[t].transpose() * &p[t + 1] * &m[t] * &a[t];
        p[t] = (&pt + pt.transpose()) * 0.5;
        f[t] = a[t].transpose() * inv(&id + &p[t + 1] * &e[t])? * &f[t + 1];
    }
    let nu = w
        .lu()
        .solve(&(x_f - f[0].transpose() * sigma))
        .ok_or_else(|| Error::InvalidArgument("terminal state not reachable: W_0 is singular".into()))?;
    let mut states = vec![sigma.clone()];
    let mut controls = Vec::with_capacity(h + 1);
    let mut costates = Vec::with_capacity(h + 1);
    for t in 0..=h {
        let x = &states[t];
        let next = &m[t] * (&a[t] * x - &e[t] * &f[t + 1] * &nu);
        let mu_next = &p[t + 1] * &next + &f[t + 1] * &nu;
        let r_chol = r[t].clone().cholesky().expect("checked above");
        controls.push(-r_chol.solve(&(b[t].transpose() * &mu_next)));
        costates.push(-mu_next);
        states.push(next);
    }
    Ok(LqSolution { states, controls, costates })
}

/// Costates of the pinned truncation at horizon `h` of an LQ bundle (linear dynamics,
/// quadratic reward), computed without reference to the bundle's own multipliers.
pub fn riccati_oracle(bundle: &InstanceBundle, h: usize) -> Result<LqSolution> {
    let def = &bundle.def;
    if bundle.oracle != OracleKind::Riccati && bundle.oracle != OracleKind::BruteForceQp {
        log::debug!("riccati oracle on a bundle declaring {:?}", bundle.oracle);
    }
    let (n, m) = (def.state_dim, def.control_dim);
    let (q, r) = match &def.reward {
        RewardDef::Quadratic { q, r } => (
            from_rows(q, n).ok_or_else(|| Error::Dimension("reward.q".into()))?,
            from_rows(r, m).ok_or_else(|| Error::Dimension("reward.r".into()))?,
        ),
        _ => return Err(Error::UnsupportedStructure("reward is not quadratic".into())),
    };
    bundle.reference.require(h + 1)?;
    let mut a = Vec::with_capacity(h + 1);
    let mut b = Vec::with_capacity(h + 1);
    let mut qs = Vec::with_capacity(h + 1);
    let mut rs = Vec::with_capacity(h + 1);
    for t in 0..=h {
        match def.dynamics.stages.get(t).unwrap_or(&def.dynamics.tail) {
            StageMapDef::Linear { a: at, b: bt } => {
                a.push(from_rows(at, n).ok_or_else(|| Error::Dimension("dynamics.a".into()))?);
                b.push(from_rows(bt, m).ok_or_else(|| Error::Dimension("dynamics.b".into()))?);
            }
            _ => return Err(Error::UnsupportedStructure(format!("stage {t} dynamics are not linear"))),
        }
        let w = def.discount.powi(t as i32);
        qs.push(&q * w);
        rs.push(&r * w);
    }
    pinned_lq(&a, &b, &qs, &rs, &bundle.reference.states[0], &bundle.reference.states[h + 1])
}

/// `min ½uᵀHu + gᵀu` over a box, by enumerating which coordinates sit at a bound.
/// `H` must be positive definite; intended for a handful of coordinates.
pub fn box_qp(hm: &DMatrix<f64>, g: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<DVector<f64>> {
    let m = g.len();
    let objective = |u: &DVector<f64>| 0.5 * (u.transpose() * hm * u)[0] + g.dot(u);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for k in 0..=m {
        for fixed in combinations(m, k) {
            for mask in 0..(1usize << k) {
                let mut u = DVector::zeros(m);
                for (j, &i) in fixed.iter().enumerate() {
                    u[i] = if mask & (1 << j) == 0 { lower[i] } else { upper[i] };
                }
                if u.iter().any(|v| !v.is_finite()) {
                    continue;
                }
                let free: Vec<usize> = (0..m).filter(|i| !fixed.contains(i)).collect();
                if !free.is_empty() {
                    let hff = DMatrix::from_fn(free.len(), free.len(), |i, j| hm[(free[i], free[j])]);
                    let rhs = DVector::from_fn(free.len(), |i, _| {
                        -g[free[i]] - fixed.iter().map(|&j| hm[(free[i], j)] * u[j]).sum::<f64>()
                    });
                    let Some(sol) = hff.cholesky().map(|c| c.solve(&rhs)) else {
                        return Err(Error::InvalidArgument("QP Hessian is not positive definite".into()));
                    };
                    for (i, &fi) in free.iter().enumerate() {
                        u[fi] = sol[i];
                    }
                }
                if (0..m).any(|i| u[i] < lower[i] - 1e-12 || u[i] > upper[i] + 1e-12) {
                    continue;
                }
                let val = objective(&u);
                if best.as_ref().map_or(true, |(bv, _)| val < *bv) {
                    best = Some((val, u));
                }
            }
        }
    }
    best.map(|(_, u)| u).ok_or_else(|| Error::InvalidArgument("empty box".into()))
}
