//! Symmetric FastICA with the log-cosh contrast (`g(u) = tanh(u)`), run on
//! PCA-reduced, whitened data.

use faer::{Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::basis::{orient_sign, BasisKind, ComponentBasis};
use super::linalg::{mul, sym_eigen_desc};
use super::pca::{fit_pca, PcaMethod};
use super::projection::whiten;
use crate::error::{Error, Result};
use crate::ingest::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcaParams {
    /// Number of independent components.
    pub k: usize,
    /// PCA dimensions kept (and whitened) before the ICA iteration.
    pub pre_pca_k: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl IcaParams {
    pub fn new(k: usize, pre_pca_k: usize) -> Self {
        Self {
            k,
            pre_pca_k,
            tol: 1e-4,
            max_iter: 200,
            seed: 0,
        }
    }

    pub fn validate(&self, dims: usize) -> Result<()> {
        if !(1 <= self.k && self.k <= self.pre_pca_k && self.pre_pca_k <= dims) {
            return Err(Error::invalid(format!(
                "ICA needs 1 <= k ({}) <= pre_pca_k ({}) <= dims ({dims})",
                self.k, self.pre_pca_k
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("ICA tolerance must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("ICA max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Result of [`fit_ica`].
#[derive(Debug, Clone)]
pub struct IcaFit {
    /// Mixing directions in pixel space, unit-normalized and ordered by the
    /// variance each explains in the original space (stored as eigenvalues).
    pub basis: ComponentBasis,
    /// `k x p` row-major map from centred pixel vectors to source estimates,
    /// rows in the same order and orientation as `basis`.
    pub unmixing: Vec<f64>,
    /// `k x pre_pca_k` row-major unmixing in whitened coordinates (orthonormal rows).
    pub whitened_unmixing: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl IcaFit {
    /// Source estimates `unmixing * (x - mean)` for every row of `x`, as an `n x k` matrix.
    pub fn sources(&self, x: &DataMatrix) -> Result<DataMatrix> {
        let (k, p) = (self.basis.k(), self.basis.dims());
        if x.dims() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: x.dims(),
            });
        }
        let w = MatRef::from_row_major_slice(&self.unmixing, k, p);
        let mut data = Vec::with_capacity(x.rows() * k);
        let shift: Vec<f64> = (0..k)
            .map(|i| (0..p).map(|j| w[(i, j)] * self.basis.mean()[j]).sum())
            .collect();
        let s = mul(x.as_faer(), w.transpose());
        for r in 0..x.rows() {
            data.extend((0..k).map(|c| s[(r, c)] - shift[c]));
        }
        DataMatrix::new(crate::ingest::Shape::flat(k), data, None)
    }
}

/// Outcome of the whitened-space fixed-point iteration.
#[derive(Debug, Clone)]
pub struct FastIcaRun {
    /// `k x m` unmixing with orthonormal rows.
    pub unmixing: Mat<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// PCA to `pre_pca_k` dimensions, whitening, then symmetric FastICA.
pub fn fit_ica(x: &DataMatrix, params: &IcaParams) -> Result<IcaFit> {
    params.validate(x.dims())?;
    let (n, p, k, m) = (x.rows(), x.dims(), params.k, params.pre_pca_k);
    if n < 10 * k {
        return Err(Error::invalid(format!(
            "ICA with k = {k} needs at least {} rows, got {n}",
            10 * k
        )));
    }
    let pca = fit_pca(x, m, PcaMethod::Auto, params.seed)?;
    let z = whiten(x, &pca, m)?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(1);
    let init = Mat::from_fn(k, m, |_, _| StandardNormal.sample(&mut rng));
    let run = fastica_whitened(z.as_faer(), init, params.tol, params.max_iter)?;
    if !run.converged {
        log::warn!(
            "FastICA did not converge within {} iterations (tol {:e})",
            params.max_iter,
            params.tol
        );
    }

    let lambda = &pca.eigenvalues()[..m];
    struct Comp {
        mixing: Vec<f64>,
        unmixing: Vec<f64>,
        whitened: Vec<f64>,
        variance: f64,
    }
    let mut comps: Vec<Comp> = (0..k)
        .map(|i| {
            let w: Vec<f64> = (0..m).map(|j| run.unmixing[(i, j)]).collect();
            let mut mixing = vec![0.0; p];
            let mut unmixing = vec![0.0; p];
            for (j, v) in pca.components().take(m).enumerate() {
                let up = w[j] * lambda[j].sqrt();
                let down = w[j] / lambda[j].sqrt();
                for ((a, u), &vj) in mixing.iter_mut().zip(unmixing.iter_mut()).zip(v) {
                    *a += up * vj;
                    *u += down * vj;
                }
            }
            let variance: f64 = w.iter().zip(lambda).map(|(wj, l)| wj * wj * l).sum();
            let norm = mixing.iter().map(|a| a * a).sum::<f64>().sqrt();
            mixing.iter_mut().for_each(|a| *a /= norm);
            let mut whitened = w;
            if orient_sign(&mut mixing) {
                unmixing.iter_mut().for_each(|u| *u = -*u);
                whitened.iter_mut().for_each(|u| *u = -*u);
            }
            Comp {
                mixing,
                unmixing,
                whitened,
                variance,
            }
        })
        .collect();
    comps.sort_by(|a, b| b.variance.total_cmp(&a.variance));

    let basis = ComponentBasis::new(
        BasisKind::Ica,
        x.shape(),
        pca.mean().to_vec(),
        comps
            .iter()
            .flat_map(|c| c.mixing.iter().copied())
            .collect(),
        comps.iter().map(|c| c.variance).collect(),
        pca.total_variance(),
    )?;
    Ok(IcaFit {
        basis,
        unmixing: comps
            .iter()
            .flat_map(|c| c.unmixing.iter().copied())
            .collect(),
        whitened_unmixing: comps
            .iter()
            .flat_map(|c| c.whitened.iter().copied())
            .collect(),
        converged: run.converged,
        iterations: run.iterations,
    })
}

/// Symmetric FastICA on whitened data `z` (`n x m`) from the initial
/// unmixing `init` (`k x m`). Each step applies
/// `w <- E[z g(w^T z)] - E[g'(w^T z)] w` to every row, then the symmetric
/// decorrelation `W <- (W W^T)^(-1/2) W`. Converged once every row satisfies
/// `1 - |<w_new, w_old>| < tol`.
pub fn fastica_whitened(
    z: MatRef<'_, f64>,
    init: Mat<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<FastIcaRun> {
    let n = z.nrows() as f64;
    let k = init.nrows();
    if init.ncols() != z.ncols() {
        return Err(Error::DimensionMismatch {
            expected: z.ncols(),
            found: init.ncols(),
        });
    }
    let mut w = symmetric_decorrelation(init.as_ref())?;
    for iter in 1..=max_iter {
        let mut y = mul(z, w.as_ref().transpose()); // n x k
        let mut mean_dg = vec![0.0; k];
        for c in 0..k {
            for v in y.as_mut().col_mut(c).iter_mut() {
                let g = v.tanh();
                mean_dg[c] += 1.0 - g * g;
                *v = g;
            }
            mean_dg[c] /= n;
        }
        let mut next = mul(y.as_ref().transpose(), z); // k x m
        for r in 0..k {
            for c in 0..next.ncols() {
                next[(r, c)] = next[(r, c)] / n - mean_dg[r] * w[(r, c)];
            }
        }
        let next = symmetric_decorrelation(next.as_ref())?;
        let change = (0..k)
            .map(|r| {
                let dot: f64 = (0..next.ncols()).map(|c| next[(r, c)] * w[(r, c)]).sum();
                1.0 - dot.abs()
            })
            .fold(0.0, f64::max);
        w = next;
        if change < tol {
            return Ok(FastIcaRun {
                unmixing: w,
                converged: true,
                iterations: iter,
            });
        }
    }
    Ok(FastIcaRun {
        unmixing: w,
        converged: false,
        iterations: max_iter,
    })
}

/// `(W W^T)^(-1/2) W`
fn symmetric_decorrelation(w: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let gram = mul(w, w.transpose());
    let (values, vectors) = sym_eigen_desc(gram.as_ref())?;
    let k = values.len();
    if values.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Linalg("rank-deficient unmixing matrix".into()));
    }
    let scaled = Mat::from_fn(k, k, |r, c| vectors[(r, c)] / values[c].sqrt());
    let inv_sqrt = mul(scaled.as_ref(), vectors.as_ref().transpose());
    Ok(mul(inv_sqrt.as_ref(), w))
}

/// Amari index of the `k x k` matrix `p` (row-major), typically the product of
/// an estimated unmixing and the true mixing. Lies in `[0, 1]` and is zero
/// exactly when `p` is a scaled permutation.
pub fn amari_index(p: &[f64], k: usize) -> f64 {
    assert_eq!(p.len(), k * k);
    if k < 2 {
        return 0.0;
    }
    let a: Vec<f64> = p.iter().map(|v| v.abs()).collect();
    let mut total = 0.0;
    for i in 0..k {
        let row = &a[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(0.0, f64::max);
        total += row.iter().sum::<f64>() / max - 1.0;
    }
    for j in 0..k {
        let col = (0..k).map(|i| a[i * k + j]);
        let max = col.clone().fold(0.0, f64::max);
        total += col.sum::<f64>() / max - 1.0;
    }
    total / (2.0 * k as f64 * (k as f64 - 1.0))
}
