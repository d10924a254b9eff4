//! Rank/range analysis, closed-range constants and least-norm preimages.

use crate::error::{Error, Result};
use crate::linalg::{all_finite_matrix, hstack, pinv_solve, rank_threshold, svd, to_rows};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct RangeReport {
    pub matrix_dims: (usize, usize),
    pub numerical_rank: usize,
    pub rank_tolerance: f64,
    /// Smallest retained singular value: the preimage-bound constant `c`.
    pub smallest_positive_singular_value: f64,
    pub surjective: bool,
    /// Orthonormal basis of the range (`rows × rank`).
    #[serde(skip)]
    pub range_basis: DMatrix<f64>,
}

impl RangeReport {
    /// The constant `c` with `‖y‖ ≥ c‖x_y‖` for least-norm preimages; 0 for the zero matrix.
    pub fn constant(&self) -> f64 {
        self.smallest_positive_singular_value
    }

    pub fn range_basis_rows(&self) -> Vec<Vec<f64>> {
        to_rows(&self.range_basis)
    }
}

pub fn range_report(m: &DMatrix<f64>, rank_tolerance: f64) -> Result<RangeReport> {
    if !all_finite_matrix(m) {
        return Err(Error::NonFinite("matrix passed to range_report".into()));
    }
    let s = svd(m);
    let thr = rank_threshold(&s.values, rank_tolerance);
    let keep: Vec<usize> = (0..s.values.len()).filter(|&i| s.values[i] > thr).collect();
    let smallest = keep.iter().map(|&i| s.values[i]).fold(f64::INFINITY, f64::min);
    let range_basis = DMatrix::from_fn(m.nrows(), keep.len(), |i, j| s.u[(i, keep[j])]);
    Ok(RangeReport {
        matrix_dims: m.shape(),
        numerical_rank: keep.len(),
        rank_tolerance,
        smallest_positive_singular_value: if keep.is_empty() { 0.0 } else { smallest },
        surjective: keep.len() == m.nrows(),
        range_basis,
    })
}

/// Pseudoinverse solution and its residual `‖M x − y‖`.
pub fn least_norm_preimage(m: &DMatrix<f64>, y: &DVector<f64>, rank_tolerance: f64) -> Result<(DVector<f64>, f64)> {
    if y.len() != m.nrows() {
        return Err(Error::Dimension(format!("{}-vector against {} rows", y.len(), m.nrows())));
    }
    let x = pinv_solve(m, y, rank_tolerance);
    let residual = (m * &x - y).norm();
    Ok((x, residual))
}

/// Target of a range-sum comparison.
#[derive(Debug, Clone)]
pub enum RangeTarget {
    AllSpace,
    RangeOf(DMatrix<f64>),
}

#[derive(Debug, Clone, Serialize)]
pub struct RangeSumReport {
    pub equal: bool,
    pub sum_rank: usize,
    pub target_rank: usize,
    /// `rank([M1 | M2 | M3])`; equals `target_rank` when the sum lies inside the target.
    pub joint_rank: usize,
}

/// Decides `range(M1) + range(M2) = target`.
pub fn sum_of_ranges_equals(m1: &DMatrix<f64>, m2: &DMatrix<f64>, target: &RangeTarget, rank_tolerance: f64) -> Result<RangeSumReport> {
    let n = m1.nrows();
    if m2.nrows() != n {
        return Err(Error::Dimension("summands have different row counts".into()));
    }
    let sum = hstack(n, &[m1, m2]);
    let sum_rank = range_report(&sum, rank_tolerance)?.numerical_rank;
    let (target_rank, joint_rank) = match target {
        RangeTarget::AllSpace => (n, n),
        RangeTarget::RangeOf(m3) => {
            if m3.nrows() != n {
                return Err(Error::Dimension("target has a different row count".into()));
            }
            let tr = range_report(m3, rank_tolerance)?.numerical_rank;
            let jr = range_report(&hstack(n, &[m1, m2, m3]), rank_tolerance)?.numerical_rank;
            (tr, jr)
        }
    };
    Ok(RangeSumReport {
        equal: sum_rank == target_rank && joint_rank == target_rank,
        sum_rank,
        target_rank,
        joint_rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DEFAULT_RANK_TOL;

    #[test]
    fn identity_report() {
        let r = range_report(&DMatrix::identity(3, 3), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r.numerical_rank, 3);
        assert_eq!(r.constant(), 1.0);
        assert!(r.surjective);
    }

    #[test]
    fn diagonal_rank_one() {
        let r = range_report(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0])), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r.numerical_rank, 1);
        assert_eq!(r.constant(), 2.0);
        assert!(!r.surjective);
    }

    #[test]
    fn zero_matrix_has_no_constant() {
        let r = range_report(&DMatrix::zeros(2, 3), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r.numerical_rank, 0);
        assert_eq!(r.constant(), 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        let m = DMatrix::from_element(1, 1, f64::NAN);
        assert!(range_report(&m, DEFAULT_RANK_TOL).is_err());
    }

    #[test]
    fn preimages() {
        let (x, r) = least_norm_preimage(&DMatrix::identity(2, 2), &DVector::from_vec(vec![3.0, 4.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(x, DVector::from_vec(vec![3.0, 4.0]));
        assert_eq!(r, 0.0);
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let (x, r) = least_norm_preimage(&p, &DVector::from_vec(vec![5.0, 0.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!((x, r), (DVector::from_vec(vec![5.0, 0.0]), 0.0));
        let (_, r) = least_norm_preimage(&p, &DVector::from_vec(vec![0.0, 1.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn range_sums() {
        let i = DMatrix::<f64>::identity(3, 3);
        let z = DMatrix::zeros(3, 3);
        assert!(sum_of_ranges_equals(&i, &z, &RangeTarget::AllSpace, DEFAULT_RANK_TOL).unwrap().equal);
        let mut e1 = DMatrix::zeros(3, 3);
        e1[(0, 0)] = 1.0;
        let mut e2 = DMatrix::zeros(3, 3);
        e2[(1, 1)] = 1.0;
        let rep = sum_of_ranges_equals(&e1, &e2, &RangeTarget::AllSpace, DEFAULT_RANK_TOL).unwrap();
        assert!(!rep.equal);
        assert_eq!(rep.sum_rank, 2);
        let m3 = hstack(3, &[&e1, &e2]);
        assert!(sum_of_ranges_equals(&e1, &e2, &RangeTarget::RangeOf(m3), DEFAULT_RANK_TOL).unwrap().equal);
        // same rank, different plane
        let mut e3 = DMatrix::zeros(3, 2);
        e3[(0, 0)] = 1.0;
        e3[(2, 1)] = 1.0;
        assert!(!sum_of_ranges_equals(&e1, &e2, &RangeTarget::RangeOf(e3), DEFAULT_RANK_TOL).unwrap().equal);
        assert!(sum_of_ranges_equals(&e1, &DMatrix::zeros(2, 1), &RangeTarget::AllSpace, DEFAULT_RANK_TOL).is_err());
    }
}
