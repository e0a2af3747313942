//! Thin helpers over faer shared by the solvers.

use faer::c64;
use faer::prelude::*;
use faer::Mat;

pub(crate) fn czero() -> c64 {
    c64::new(0.0, 0.0)
}

pub(crate) fn creal(x: f64) -> c64 {
    c64::new(x, 0.0)
}

pub(crate) fn column(values: &[c64]) -> Mat<c64> {
    Mat::from_fn(values.len(), 1, |i, _| values[i])
}

pub(crate) fn column_to_vec(m: &Mat<c64>) -> Vec<c64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

/// Least-squares solution of a (possibly overdetermined) full-column-rank system.
pub(crate) fn lstsq(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    a.qr().solve_lstsq(b)
}

pub(crate) fn lu_solve(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    a.partial_piv_lu().solve(b)
}


pub(crate) fn all_finite(m: &Mat<c64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| m[(i, j)].re.is_finite() && m[(i, j)].im.is_finite()))
}

/// Binomial coefficient as an exact integer, converted once to f64.
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as f64
}
