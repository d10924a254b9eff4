//! Dense linear-algebra helpers built on nalgebra's SVD.

use nalgebra::{DMatrix, DVector};

/// Singular values at or below this absolute value never count toward rank.
pub const ABSOLUTE_RANK_FLOOR: f64 = 1e-12;

/// Default relative rank tolerance (times the largest singular value).
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Thin SVD that tolerates empty matrices.
pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub(crate) fn svd(m: &DMatrix<f64>) -> Svd {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Svd {
            u: DMatrix::zeros(r, 0),
            values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, c),
        };
    }
    let s = m.clone().svd(true, true);
    Svd {
        u: s.u.expect("requested U"),
        values: s.singular_values,
        v_t: s.v_t.expect("requested V^T"),
    }
}

/// Threshold under which a singular value is treated as zero.
pub fn rank_threshold(values: &DVector<f64>, rel_tol: f64) -> f64 {
    let largest = values.iter().cloned().fold(0.0, f64::max);
    (rel_tol * largest).max(ABSOLUTE_RANK_FLOOR)
}

pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = svd(m);
    let thr = rank_threshold(&s.values, rel_tol);
    s.values.iter().filter(|&&v| v > thr).count()
}

/// Orthonormal basis (as columns) of the column span of `m`.
pub fn column_span(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let s = svd(m);
    let thr = rank_threshold(&s.values, rel_tol);
    let keep: Vec<usize> = (0..s.values.len()).filter(|&i| s.values[i] > thr).collect();
    select_columns(&s.u, &keep)
}

/// Orthonormal basis of the orthogonal complement of the span of `basis`
/// (whose columns must be orthonormal) inside R^dim.
pub fn orthogonal_complement(basis: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    if basis.ncols() == 0 {
        return DMatrix::identity(dim, dim);
    }
    if basis.ncols() >= dim {
        return DMatrix::zeros(dim, 0);
    }
    let proj = DMatrix::identity(dim, dim) - basis * basis.transpose();
    let s = svd(&proj);
    let keep: Vec<usize> = (0..s.values.len()).filter(|&i| s.values[i] > 0.5).collect();
    select_columns(&s.u, &keep)
}

/// Orthonormal basis of the null space of `m` (columns live in R^{m.ncols()}).
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let row_space = column_span(&m.transpose(), rel_tol);
    orthogonal_complement(&row_space, m.ncols())
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    svd(m).values.iter().cloned().fold(0.0, f64::max)
}

/// Least-norm solution `x = M⁺ y` using only singular values above the rank threshold.
pub fn pinv_solve(m: &DMatrix<f64>, y: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let s = svd(m);
    let thr = rank_threshold(&s.values, rel_tol);
    let mut x = DVector::zeros(m.ncols());
    for i in 0..s.values.len() {
        let sv = s.values[i];
        if sv > thr {
            let coeff = s.u.column(i).dot(y) / sv;
            x += s.v_t.row(i).transpose() * coeff;
        }
    }
    x
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Horizontal concatenation; every block must have `rows` rows.
pub fn hstack(rows: usize, blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        out.view_mut((0, at), (rows, b.ncols())).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Matrix whose columns are the given vectors.
pub fn columns_matrix(dim: usize, vectors: &[DVector<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        out.set_column(j, v);
    }
    out
}

pub fn all_finite_matrix(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Builds a matrix from row-major nested vectors. Empty input gives a `0 × cols` matrix.
pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Option<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_wide_matrix() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = null_space(&m, DEFAULT_RANK_TOL);
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).norm() < 1e-12);
        assert!((n.transpose() * &n - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn complement_dimensions() {
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let c = orthogonal_complement(&b, 3);
        assert_eq!(c.ncols(), 2);
        assert!((b.transpose() * c).norm() < 1e-12);
        assert_eq!(orthogonal_complement(&DMatrix::zeros(3, 0), 3).ncols(), 3);
    }

    #[test]
    fn pinv_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let x = pinv_solve(&m, &DVector::from_vec(vec![5.0, 3.0]), DEFAULT_RANK_TOL);
        assert_eq!(x, DVector::from_vec(vec![5.0, 0.0]));
    }

    #[test]
    fn empty_matrices_are_handled() {
        let m = DMatrix::<f64>::zeros(0, 3);
        assert_eq!(numerical_rank(&m, DEFAULT_RANK_TOL), 0);
        assert_eq!(null_space(&m, DEFAULT_RANK_TOL).ncols(), 3);
    }
}
