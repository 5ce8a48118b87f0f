//! Numerical core: covariance, exact and randomized PCA, projection and
//! whitening, and FastICA.

mod basis;
mod covariance;
mod ica;
mod linalg;
mod pca;
mod projection;

pub use self::basis::{orient_sign, BasisKind, ComponentBasis};
pub use self::covariance::{mean_and_covariance, Covariance};
pub use self::ica::{amari_index, fastica_whitened, fit_ica, FastIcaRun, IcaFit, IcaParams};
pub use self::pca::{fit_pca, PcaMethod, EXACT_MAX_DIMS, OVERSAMPLING, POWER_ITERATIONS};
pub use self::projection::{project, reconstruct, whiten};
