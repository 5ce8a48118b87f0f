//! Thin wrappers over faer kernels, run sequentially.

use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self_adjoint_evd, self_adjoint_evd_scratch, ComputeEigenvectors};
use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par};

use crate::error::{Error, Result};

pub(crate) fn gemm(dst: MatMut<'_, f64>, accum: Accum, lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) {
    matmul(dst, accum, lhs, rhs, 1.0, Par::Seq);
}

pub(crate) fn mul(lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::zeros(lhs.nrows(), rhs.ncols());
    gemm(out.as_mut(), Accum::Replace, lhs, rhs);
    out
}

/// Eigen-decomposition of a symmetric matrix (lower triangle read), with
/// eigenvalues in descending order and eigenvectors as matching columns.
pub(crate) fn sym_eigen_desc(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    let mut u = Mat::<f64>::zeros(n, n);
    let mut s = Diag::<f64>::zeros(n);
    let par = Par::Seq;
    let mut mem = MemBuffer::new(self_adjoint_evd_scratch::<f64>(
        n,
        ComputeEigenvectors::Yes,
        par,
        Default::default(),
    ));
    self_adjoint_evd(
        a,
        s.as_mut(),
        Some(u.as_mut()),
        par,
        MemStack::new(&mut mem),
        Default::default(),
    )
    .map_err(|e| Error::Linalg(format!("symmetric eigendecomposition failed: {e:?}")))?;
    // faer returns ascending order
    let values = (0..n).rev().map(|i| s[i]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| u[(r, n - 1 - c)]);
    Ok((values, vectors))
}

/// Orthonormalizes the columns in place (modified Gram-Schmidt, two passes).
/// A column that is numerically dependent on its predecessors is replaced by
/// the first canonical basis vector that is not.
pub(crate) fn orthonormalize(m: &mut Mat<f64>) {
    let (rows, cols) = (m.nrows(), m.ncols());
    assert!(
        cols <= rows,
        "cannot orthonormalize {cols} columns in dimension {rows}"
    );
    for j in 0..cols {
        let original = col_norm(m.as_ref(), j);
        project_out(m, j);
        project_out(m, j);
        let mut norm = col_norm(m.as_ref(), j);
        if norm <= 1e-10 * original || norm == 0.0 {
            for e in 0..rows {
                for r in 0..rows {
                    m[(r, j)] = if r == e { 1.0 } else { 0.0 };
                }
                project_out(m, j);
                project_out(m, j);
                norm = col_norm(m.as_ref(), j);
                if norm > 0.5 {
                    break;
                }
            }
        }
        for r in 0..rows {
            m[(r, j)] /= norm;
        }
    }
}

fn col_norm(m: MatRef<'_, f64>, j: usize) -> f64 {
    (0..m.nrows())
        .map(|r| m[(r, j)] * m[(r, j)])
        .sum::<f64>()
        .sqrt()
}

fn project_out(m: &mut Mat<f64>, j: usize) {
    for i in 0..j {
        let dot: f64 = (0..m.nrows()).map(|r| m[(r, i)] * m[(r, j)]).sum();
        for r in 0..m.nrows() {
            let v = m[(r, i)];
            m[(r, j)] -= dot * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_descending() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { [1.0, 3.0, 2.0][i] } else { 0.0 });
        let (vals, vecs) = sym_eigen_desc(a.as_ref()).unwrap();
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthonormalize_handles_dependent_columns() {
        let mut m = Mat::from_fn(4, 3, |r, c| match c {
            0 => r as f64 + 1.0,
            1 => 2.0 * (r as f64 + 1.0),
            _ => (r * r) as f64,
        });
        orthonormalize(&mut m);
        let g = mul(m.as_ref().transpose(), m.as_ref());
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - e).abs() < 1e-12);
            }
        }
    }
}
