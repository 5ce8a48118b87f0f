use faer::{Accum, Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::basis::{BasisKind, ComponentBasis};
use super::covariance::{canonical_row_order, column_mean, mean_and_covariance, total_variance};
use super::linalg::{gemm, mul, orthonormalize, sym_eigen_desc};
use crate::error::{Error, Result};
use crate::ingest::DataMatrix;

/// Largest dimension solved with a full eigendecomposition under
/// [`PcaMethod::Auto`].
pub const EXACT_MAX_DIMS: usize = 5000;
/// Extra columns sampled by the randomized range finder.
pub const OVERSAMPLING: usize = 10;
/// Subspace (power) iterations of the randomized range finder.
pub const POWER_ITERATIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcaMethod {
    Exact,
    Randomized,
    /// Exact up to [`EXACT_MAX_DIMS`] dimensions, randomized above.
    Auto,
}

impl PcaMethod {
    pub fn resolve(self, dims: usize) -> PcaMethod {
        match self {
            PcaMethod::Auto if dims <= EXACT_MAX_DIMS => PcaMethod::Exact,
            PcaMethod::Auto => PcaMethod::Randomized,
            m => m,
        }
    }
}

impl std::str::FromStr for PcaMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(PcaMethod::Exact),
            "randomized" => Ok(PcaMethod::Randomized),
            "auto" => Ok(PcaMethod::Auto),
            _ => Err(Error::invalid(format!(
                "unknown PCA method {s:?} (expected exact, randomized or auto)"
            ))),
        }
    }
}

/// Top-`k` principal components of the rows of `x`.
///
/// The randomized method uses `k + OVERSAMPLING` Gaussian test vectors drawn
/// from `seed` and `POWER_ITERATIONS` subspace iterations, followed by a
/// Rayleigh-Ritz step; it never forms the `p x p` covariance.
pub fn fit_pca(x: &DataMatrix, k: usize, method: PcaMethod, seed: u64) -> Result<ComponentBasis> {
    let (n, p) = (x.rows(), x.dims());
    if n < 2 {
        return Err(Error::invalid(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if k == 0 || k > (n - 1).min(p) {
        return Err(Error::invalid(format!(
            "k = {k} out of range 1..={} for {n} rows of dimension {p}",
            (n - 1).min(p)
        )));
    }
    if n < p {
        log::warn!(
            "only {n} samples for {p} dimensions (ratio {:.2} < 1); components may not be stable",
            n as f64 / p as f64
        );
    }
    match method.resolve(p) {
        PcaMethod::Randomized => fit_randomized(x, k, seed),
        _ => fit_exact(x, k),
    }
}

fn fit_exact(x: &DataMatrix, k: usize) -> Result<ComponentBasis> {
    let cov = mean_and_covariance(x)?;
    let total = cov.trace();
    let (values, vectors) = sym_eigen_desc(cov.matrix().as_ref())?;
    let (mean, _) = cov.into_parts();
    build_basis(x, mean, vectors.as_ref(), &values, k, total)
}

fn fit_randomized(x: &DataMatrix, k: usize, seed: u64) -> Result<ComponentBasis> {
    let (n, p) = (x.rows(), x.dims());
    if k + OVERSAMPLING > p {
        return Err(Error::invalid(format!(
            "randomized PCA needs k + {OVERSAMPLING} <= {p} dimensions; use the exact method"
        )));
    }
    let l = (k + OVERSAMPLING).min(n);
    let order = canonical_row_order(x);
    let mean = column_mean(x, &order);
    let total = total_variance(x, &mean, &order);
    let centred = CentredOperator::new(x, &mean);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Mat::from_fn(p, l, |_, _| StandardNormal.sample(&mut rng));
    let mut q = centred.apply(omega.as_ref());
    orthonormalize(&mut q);
    for _ in 0..POWER_ITERATIONS {
        let mut z = centred.apply_transpose(q.as_ref());
        orthonormalize(&mut z);
        q = centred.apply(z.as_ref());
        orthonormalize(&mut q);
    }
    let mut z = centred.apply_transpose(q.as_ref());
    orthonormalize(&mut z);

    // Rayleigh-Ritz on span(z): (Xc z)^T (Xc z) / (n - 1)
    let w = centred.apply(z.as_ref());
    let mut small = mul(w.as_ref().transpose(), w.as_ref());
    for v in small.as_mut().col_iter_mut().flat_map(|c| c.iter_mut()) {
        *v /= (n - 1) as f64;
    }
    let (values, ritz) = sym_eigen_desc(small.as_ref())?;
    let vectors = mul(z.as_ref(), ritz.as_ref());
    build_basis(x, mean, vectors.as_ref(), &values, k, total)
}

fn build_basis(
    x: &DataMatrix,
    mean: Vec<f64>,
    vectors: MatRef<'_, f64>,
    values: &[f64],
    k: usize,
    total: f64,
) -> Result<ComponentBasis> {
    let p = x.dims();
    let mut components = Vec::with_capacity(k * p);
    for c in 0..k {
        let col = vectors.col(c);
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        components.extend(col.iter().map(|v| v / norm));
    }
    let eigenvalues = values[..k].iter().map(|&l| l.max(0.0)).collect();
    ComponentBasis::new(
        BasisKind::Pca,
        x.shape(),
        mean,
        components,
        eigenvalues,
        total,
    )
}

/// Multiplication by the mean-centred data matrix without materializing it.
struct CentredOperator<'a> {
    x: MatRef<'a, f64>,
    mean: MatRef<'a, f64>,
}

impl<'a> CentredOperator<'a> {
    fn new(x: &'a DataMatrix, mean: &'a [f64]) -> Self {
        Self {
            x: x.as_faer(),
            mean: MatRef::from_column_major_slice(mean, mean.len(), 1),
        }
    }

    /// `(X - 1 mean^T) m`
    fn apply(&self, m: MatRef<'_, f64>) -> Mat<f64> {
        let mut out = mul(self.x, m);
        let shift = mul(self.mean.transpose(), m);
        for j in 0..out.ncols() {
            let s = shift[(0, j)];
            for v in out.as_mut().col_mut(j).iter_mut() {
                *v -= s;
            }
        }
        out
    }

    /// `(X - 1 mean^T)^T m`
    fn apply_transpose(&self, m: MatRef<'_, f64>) -> Mat<f64> {
        let mut out = mul(self.x.transpose(), m);
        let ones = Mat::<f64>::from_fn(1, m.nrows(), |_, _| 1.0);
        let col_sums = mul(ones.as_ref(), m);
        gemm(out.as_mut(), Accum::Add, self.mean, (-&col_sums).as_ref());
        out
    }
}
