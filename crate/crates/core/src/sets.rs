//! Polyhedral control sets, their tangent cones and finite generator descriptions.

use crate::error::{Error, Result};
use crate::linalg::{
    column_span, columns_matrix, hstack, null_space, numerical_rank, orthogonal_complement, DEFAULT_RANK_TOL,
};
use crate::lp::conic_least_squares;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Absolute tolerance for set membership and constraint activity.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// A nonempty closed convex polyhedron in R^m.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    /// Coordinate bounds; entries may be infinite.
    Box { lower: DVector<f64>, upper: DVector<f64> },
    /// `{u : a u ≤ b}`.
    HalfSpaces { a: DMatrix<f64>, b: DVector<f64> },
    AllSpace { dim: usize },
}

impl ConvexSet {
    pub fn new_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension("box bounds must have equal positive length".into()));
        }
        for i in 0..lower.len() {
            if lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i] || lower[i] == f64::INFINITY || upper[i] == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "empty box coordinate {i}: [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    pub fn new_half_spaces(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() || a.ncols() == 0 {
            return Err(Error::Dimension("half-space system a u <= b".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("half-space system".into()));
        }
        let set = ConvexSet::HalfSpaces { a, b };
        if set.feasible_point().is_none() {
            return Err(Error::InvalidArgument("half-space system is empty".into()));
        }
        Ok(set)
    }

    /// The standard simplex `{u ≥ 0, Σ u ≤ 1}` in R^dim.
    pub fn simplex(dim: usize) -> Self {
        let mut a = DMatrix::zeros(dim + 1, dim);
        for i in 0..dim {
            a[(i, i)] = -1.0;
            a[(dim, i)] = 1.0;
        }
        let mut b = DVector::zeros(dim + 1);
        b[dim] = 1.0;
        ConvexSet::HalfSpaces { a, b }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::HalfSpaces { a, .. } => a.ncols(),
            ConvexSet::AllSpace { dim } => *dim,
        }
    }

    /// Largest constraint violation at `u` (zero inside the set).
    pub fn violation(&self, u: &DVector<f64>) -> f64 {
        match self {
            ConvexSet::Box { lower, upper } => (0..u.len())
                .map(|i| (lower[i] - u[i]).max(u[i] - upper[i]))
                .fold(0.0, f64::max),
            ConvexSet::HalfSpaces { a, b } => (a * u - b).iter().cloned().fold(0.0, f64::max),
            ConvexSet::AllSpace { .. } => 0.0,
        }
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.len() == self.dim() && u.iter().all(|x| x.is_finite()) && self.violation(u) <= MEMBERSHIP_TOL
    }

    pub fn is_all_space(&self) -> bool {
        match self {
            ConvexSet::AllSpace { .. } => true,
            ConvexSet::Box { lower, upper } => lower.iter().all(|l| *l == f64::NEG_INFINITY) && upper.iter().all(|u| *u == f64::INFINITY),
            ConvexSet::HalfSpaces { a, b } => a.nrows() == 0 || (a.iter().all(|v| *v == 0.0) && b.iter().all(|v| *v >= 0.0)),
        }
    }

    /// The tangent cone at a member point: closure of the positive hull of `set − u`.
    pub fn tangent_cone(&self, u: &DVector<f64>) -> Result<ConvexSet> {
        if u.len() != self.dim() {
            return Err(Error::Dimension(format!("point has {} entries, set lives in R^{}", u.len(), self.dim())));
        }
        if !self.contains(u) {
            return Err(Error::NotMember(self.violation(u)));
        }
        Ok(match self {
            ConvexSet::AllSpace { dim } => ConvexSet::AllSpace { dim: *dim },
            ConvexSet::Box { lower, upper } => {
                let m = lower.len();
                let lo = DVector::from_fn(m, |i, _| {
                    if (u[i] - lower[i]).abs() <= MEMBERSHIP_TOL { 0.0 } else { f64::NEG_INFINITY }
                });
                let hi = DVector::from_fn(m, |i, _| {
                    if (upper[i] - u[i]).abs() <= MEMBERSHIP_TOL { 0.0 } else { f64::INFINITY }
                });
                let cone = ConvexSet::Box { lower: lo, upper: hi };
                if cone.is_all_space() { ConvexSet::AllSpace { dim: m } } else { cone }
            }
            ConvexSet::HalfSpaces { a, b } => {
                let active: Vec<usize> = (0..a.nrows())
                    .filter(|&i| (a.row(i) * u)[0] >= b[i] - MEMBERSHIP_TOL)
                    .collect();
                if active.is_empty() {
                    ConvexSet::AllSpace { dim: a.ncols() }
                } else {
                    let rows = DMatrix::from_fn(active.len(), a.ncols(), |i, j| a[(active[i], j)]);
                    ConvexSet::HalfSpaces { a: rows, b: DVector::zeros(active.len()) }
                }
            }
        })
    }

    /// Generators of the recession cone (for a cone, of the cone itself).
    pub fn recession_generators(&self) -> ConeGenerators {
        let dim = self.dim();
        match self {
            ConvexSet::AllSpace { .. } => ConeGenerators {
                dim,
                lineality: DMatrix::identity(dim, dim),
                rays: Vec::new(),
            },
            ConvexSet::Box { lower, upper } => {
                let mut lin = Vec::new();
                let mut rays = Vec::new();
                for i in 0..dim {
                    let e = DVector::from_fn(dim, |k, _| if k == i { 1.0 } else { 0.0 });
                    match (lower[i].is_finite(), upper[i].is_finite()) {
                        (false, false) => lin.push(e),
                        (true, false) => rays.push(e),
                        (false, true) => rays.push(-e),
                        (true, true) => {}
                    }
                }
                ConeGenerators { dim, lineality: columns_matrix(dim, &lin), rays }
            }
            ConvexSet::HalfSpaces { a, .. } => ConeGenerators::of_polyhedral_cone(a),
        }
    }

    /// Vertices of the set intersected with the orthogonal complement of its lineality space.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        match self {
            ConvexSet::AllSpace { dim } => vec![DVector::zeros(*dim)],
            ConvexSet::Box { lower, upper } => {
                let m = lower.len();
                let choices: Vec<Vec<f64>> = (0..m)
                    .map(|i| match (lower[i].is_finite(), upper[i].is_finite()) {
                        (true, true) if lower[i] == upper[i] => vec![lower[i]],
                        (true, true) => vec![lower[i], upper[i]],
                        (true, false) => vec![lower[i]],
                        (false, true) => vec![upper[i]],
                        (false, false) => vec![0.0],
                    })
                    .collect();
                let mut out = vec![DVector::zeros(m)];
                for (i, opts) in choices.iter().enumerate() {
                    out = out
                        .into_iter()
                        .flat_map(|v| {
                            opts.iter().map(move |&c| {
                                let mut w = v.clone();
                                w[i] = c;
                                w
                            })
                        })
                        .collect();
                }
                out
            }
            ConvexSet::HalfSpaces { a, b } => half_space_vertices(a, b),
        }
    }

    /// Some member point, or `None` if the set is empty.
    pub fn feasible_point(&self) -> Option<DVector<f64>> {
        match self {
            ConvexSet::AllSpace { dim } => Some(DVector::zeros(*dim)),
            ConvexSet::Box { lower, upper } => Some(DVector::from_fn(lower.len(), |i, _| {
                match (lower[i].is_finite(), upper[i].is_finite()) {
                    (true, true) => 0.5 * (lower[i] + upper[i]),
                    (true, false) => lower[i],
                    (false, true) => upper[i],
                    (false, false) => 0.0,
                }
            })),
            ConvexSet::HalfSpaces { a, b } => {
                use crate::lp::{LinearProgram, LpOutcome};
                let mut lp = LinearProgram::maximize(vec![0.0; a.ncols()]);
                for i in 0..a.nrows() {
                    lp.le(a.row(i).iter().cloned().collect(), b[i]);
                }
                match lp.solve() {
                    Ok(LpOutcome::Optimal { x, .. }) => Some(DVector::from_vec(x)),
                    _ => None,
                }
            }
        }
    }
}

fn half_space_vertices(a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = a.ncols();
    let lin = null_space(a, DEFAULT_RANK_TOL);
    let k = n - lin.ncols();
    let mut out: Vec<DVector<f64>> = Vec::new();
    for subset in combinations(a.nrows(), k) {
        // tight rows plus lineality equalities pin a single point
        let mut sys = DMatrix::zeros(k + lin.ncols(), n);
        let mut rhs = DVector::zeros(k + lin.ncols());
        for (r, &i) in subset.iter().enumerate() {
            sys.set_row(r, &a.row(i));
            rhs[r] = b[i];
        }
        for j in 0..lin.ncols() {
            sys.set_row(k + j, &lin.column(j).transpose());
        }
        if numerical_rank(&sys, DEFAULT_RANK_TOL) < n {
            continue;
        }
        let Some(v) = sys.clone().lu().solve(&rhs) else { continue };
        let slack = (a * &v - b).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if slack <= MEMBERSHIP_TOL * (1.0 + v.amax()) && !out.iter().any(|w| (w - &v).amax() <= 1e-9) {
            out.push(v);
        }
    }
    out
}

/// All `k`-element subsets of `0..n` in lexicographic order.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn extend(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            extend(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    extend(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// A finitely generated convex cone: `span(lineality) + cone(rays)`.
#[derive(Debug, Clone)]
pub struct ConeGenerators {
    pub dim: usize,
    /// Orthonormal basis of the lineality space, as columns.
    pub lineality: DMatrix<f64>,
    /// Unit extreme rays of the pointed part.
    pub rays: Vec<DVector<f64>>,
}

impl ConeGenerators {
    /// Generators of `{d : g d ≤ 0}`.
    pub fn of_polyhedral_cone(g: &DMatrix<f64>) -> Self {
        let n = g.ncols();
        let lineality = null_space(g, DEFAULT_RANK_TOL);
        let w = orthogonal_complement(&lineality, n);
        let r = w.ncols();
        let mut rays: Vec<DVector<f64>> = Vec::new();
        if r > 0 {
            let h = g * &w;
            for subset in combinations(h.nrows(), r - 1) {
                let sub = DMatrix::from_fn(subset.len(), r, |i, j| h[(subset[i], j)]);
                let ns = null_space(&sub, DEFAULT_RANK_TOL);
                if ns.ncols() != 1 {
                    continue;
                }
                let y = ns.column(0).into_owned();
                for cand in [y.clone(), -y] {
                    let worst = (&h * &cand).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    if worst <= 1e-10 * (1.0 + h.amax()) {
                        let d = (&w * &cand).normalize();
                        if !rays.iter().any(|e| (e - &d).amax() <= 1e-9) {
                            rays.push(d);
                        }
                    }
                }
            }
        }
        ConeGenerators { dim: n, lineality, rays }
    }

    pub fn is_trivial(&self) -> bool {
        self.lineality.ncols() == 0 && self.rays.is_empty()
    }

    pub fn ray_matrix(&self) -> DMatrix<f64> {
        columns_matrix(self.dim, &self.rays)
    }

    /// Orthonormal basis of the linear span of the cone.
    pub fn span_basis(&self) -> DMatrix<f64> {
        let rays = self.ray_matrix();
        column_span(&hstack(self.dim, &[&self.lineality, &rays]), DEFAULT_RANK_TOL)
    }

    /// Dimension of the affine hull (the cone contains 0, so of its span).
    pub fn hull_dimension(&self) -> usize {
        self.span_basis().ncols()
    }

    /// Distance from `d` to the cone.
    pub fn distance(&self, d: &DVector<f64>) -> f64 {
        conic_least_squares(&self.lineality, &self.ray_matrix(), d).residual
    }

    /// A random member: uniform weights on the lineality basis and on the rays.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let mut d = DVector::zeros(self.dim);
        for j in 0..self.lineality.ncols() {
            let c: f64 = rng.gen_range(-1.0..1.0);
            d += self.lineality.column(j) * c;
        }
        for r in &self.rays {
            let c: f64 = rng.gen_range(0.0..1.0);
            d += r * c;
        }
        d
    }

    /// Image of the cone under a linear map.
    pub fn map(&self, m: &DMatrix<f64>) -> MappedCone {
        MappedCone {
            lineality: m * &self.lineality,
            rays: m * self.ray_matrix(),
        }
    }
}

/// Image of a finitely generated cone: generators are no longer orthonormal or extreme.
#[derive(Debug, Clone)]
pub struct MappedCone {
    pub lineality: DMatrix<f64>,
    pub rays: DMatrix<f64>,
}

impl MappedCone {
    pub fn span_basis(&self) -> DMatrix<f64> {
        column_span(&hstack(self.lineality.nrows(), &[&self.lineality, &self.rays]), DEFAULT_RANK_TOL)
    }
}
