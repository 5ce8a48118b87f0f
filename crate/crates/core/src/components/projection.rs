use faer::{Accum, Mat, MatRef};

use super::basis::ComponentBasis;
use super::linalg::{gemm, mul};
use crate::error::{Error, Result};
use crate::ingest::{DataMatrix, Shape};

fn components_ref(basis: &ComponentBasis, k: usize) -> MatRef<'_, f64> {
    // k x p row-major
    MatRef::from_row_major_slice(
        &basis.components_flat()[..k * basis.dims()],
        k,
        basis.dims(),
    )
}

fn check_k(basis: &ComponentBasis, k: Option<usize>) -> Result<usize> {
    let k = k.unwrap_or(basis.k());
    if k == 0 || k > basis.k() {
        return Err(Error::invalid(format!(
            "k = {k} out of range 1..={}",
            basis.k()
        )));
    }
    Ok(k)
}

fn to_matrix(m: Mat<f64>, shape: Shape) -> Result<DataMatrix> {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        data.extend(m.row(r).iter().copied());
    }
    DataMatrix::new(shape, data, None)
}

/// Scores `(rows - mean) * components^T` for the first `k` components.
pub fn project(basis: &ComponentBasis, x: &DataMatrix, k: Option<usize>) -> Result<DataMatrix> {
    if x.dims() != basis.dims() {
        return Err(Error::DimensionMismatch {
            expected: basis.dims(),
            found: x.dims(),
        });
    }
    let k = check_k(basis, k)?;
    let comps = components_ref(basis, k);
    let mut scores = mul(x.as_faer(), comps.transpose());
    let mean = MatRef::from_row_major_slice(basis.mean(), 1, basis.dims());
    let shift = mul(mean, comps.transpose());
    for r in 0..scores.nrows() {
        for c in 0..k {
            scores[(r, c)] -= shift[(0, c)];
        }
    }
    let ids = x.row_ids().map(<[String]>::to_vec);
    let out = to_matrix(scores, Shape::flat(k))?;
    match ids {
        Some(ids) => DataMatrix::new(out.shape(), out.into_data(), Some(ids)),
        None => Ok(out),
    }
}

/// Inverse of [`project`]: `mean + scores * components` over the first
/// `scores.dims()` components.
pub fn reconstruct(basis: &ComponentBasis, scores: &DataMatrix) -> Result<DataMatrix> {
    let k = scores.dims();
    if k > basis.k() {
        return Err(Error::DimensionMismatch {
            expected: basis.k(),
            found: k,
        });
    }
    let comps = components_ref(basis, k);
    let mut out = Mat::from_fn(scores.rows(), basis.dims(), |_, c| basis.mean()[c]);
    gemm(out.as_mut(), Accum::Add, scores.as_faer(), comps);
    to_matrix(out, basis.shape())
}

/// PCA scores of the first `k` components scaled to unit variance.
pub fn whiten(x: &DataMatrix, basis: &ComponentBasis, k: usize) -> Result<DataMatrix> {
    let k = check_k(basis, Some(k))?;
    let lambda = basis.eigenvalues();
    let threshold = 1e-10 * lambda[0];
    if let Some(j) = (0..k).find(|&j| !(lambda[j] > threshold)) {
        return Err(Error::NearZeroEigenvalue {
            index: j + 1,
            value: lambda[j],
            threshold,
        });
    }
    let scores = project(basis, x, Some(k))?;
    let scale: Vec<f64> = lambda[..k].iter().map(|l| 1.0 / l.sqrt()).collect();
    let data = scores
        .data()
        .chunks_exact(k)
        .flat_map(|row| row.iter().zip(&scale).map(|(s, f)| s * f))
        .collect();
    DataMatrix::new(
        Shape::flat(k),
        data,
        scores.row_ids().map(<[String]>::to_vec),
    )
}
