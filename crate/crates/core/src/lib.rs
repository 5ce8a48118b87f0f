//! Dataset-level visual analysis for image datasets.
//!
//! * [`ingest`]: JSONL manifests, image decoding, crop/resize, data matrices
//!   and random patch sampling.
//! * [`components`]: covariance, exact and randomized PCA, whitening and FastICA.
//! * [`spatial`]: per-category mask heatmaps, split comparison, co-occurrence.
//! * [`average`]: per-group mean images.
//! * [`ablation`]: channel-ablated dataset variants and top-1 scoring.
//! * [`render`]: dual-image component cards and grids, heatmaps, reports.
//!
//! All pixel math runs on `f64` values in `[0, 1]`. Flattened images use
//! row-major `(y, x, c)` order throughout.

pub mod ablation;
pub mod average;
pub mod components;
mod error;
pub mod ingest;
pub mod render;
pub mod spatial;

pub use components::{BasisKind, ComponentBasis, IcaFit, IcaParams, PcaMethod};
pub use error::{Error, Result};
pub use ingest::{DataMatrix, DatasetManifest, ImageBuffer, LoadOptions, SampleRecord, Shape};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
