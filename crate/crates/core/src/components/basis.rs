use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Pca,
    Ica,
}

/// Ordered unit component vectors with their variances and the mean they
/// are taken relative to.
///
/// Every component is sign-oriented: its entry of largest magnitude is
/// positive (the lowest index wins ties).
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentBasis {
    mean: Vec<f64>,
    // k x p, row-major
    components: Vec<f64>,
    eigenvalues: Vec<f64>,
    total_variance: f64,
    shape: Shape,
    kind: BasisKind,
}

const UNIT_TOL: f64 = 1e-6;

impl ComponentBasis {
    /// Validates and sign-orients the components.
    pub fn new(
        kind: BasisKind,
        shape: Shape,
        mean: Vec<f64>,
        mut components: Vec<f64>,
        eigenvalues: Vec<f64>,
        total_variance: f64,
    ) -> Result<Self> {
        let p = shape.len();
        if mean.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: mean.len(),
            });
        }
        let k = eigenvalues.len();
        if components.len() != k * p {
            return Err(Error::DimensionMismatch {
                expected: k * p,
                found: components.len(),
            });
        }
        if eigenvalues.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::invalid(
                "eigenvalues must be finite and non-negative",
            ));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("eigenvalues must be non-increasing"));
        }
        if !(total_variance >= 0.0) {
            return Err(Error::invalid("total variance must be non-negative"));
        }
        for (i, c) in components.chunks_exact_mut(p).enumerate() {
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOL {
                return Err(Error::invalid(format!(
                    "component {} has norm {norm}, expected 1",
                    i + 1
                )));
            }
            orient_sign(c);
        }
        Ok(Self {
            mean,
            components,
            eigenvalues,
            total_variance,
            shape,
            kind,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    /// Number of components.
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Component `i` (0-based).
    pub fn component(&self, i: usize) -> &[f64] {
        let p = self.dims();
        &self.components[i * p..(i + 1) * p]
    }

    pub fn components(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.components.chunks_exact(self.dims())
    }

    pub(crate) fn components_flat(&self) -> &[f64] {
        &self.components
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// `eigenvalue_i / total_variance`, or zeros for a zero-variance dataset.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance > 0.0 {
            self.eigenvalues
                .iter()
                .map(|l| (l / self.total_variance).min(1.0))
                .collect()
        } else {
            vec![0.0; self.k()]
        }
    }

    /// Keeps the first `k` components.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k() {
            return Err(Error::invalid(format!(
                "cannot keep {k} of {} components",
                self.k()
            )));
        }
        let mut out = self.clone();
        out.eigenvalues.truncate(k);
        out.components.truncate(k * self.dims());
        Ok(out)
    }

    /// Writes `path` (JSON header) and a sibling `.bin` file holding the mean
    /// followed by each component, as little-endian `f64`, row-major.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bin_path = path.with_extension("bin");
        let header = BasisHeader {
            format: FORMAT.into(),
            version: VERSION,
            kind: self.kind,
            shape: self.shape,
            dims: self.dims(),
            k: self.k(),
            eigenvalues: self.eigenvalues.clone(),
            explained_variance_ratio: self.explained_variance_ratio(),
            total_variance: self.total_variance,
            data: DataLayout {
                file: bin_path
                    .file_name()
                    .map(PathBuf::from)
                    .unwrap_or_default(),
                dtype: "f64-le".into(),
                rows: self.k() + 1,
                cols: self.dims(),
                layout: "row-major; row 0 is the mean, rows 1..=k the components".into(),
            },
        };
        let mut bytes = Vec::with_capacity((self.k() + 1) * self.dims() * 8);
        for v in self.mean.iter().chain(&self.components) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
        let json = serde_json::to_vec_pretty(&header)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let header: BasisHeader = serde_json::from_slice(&text)?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::invalid(format!(
                "unsupported basis format {} v{}",
                header.format, header.version
            )));
        }
        let bin_path = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&header.data.file);
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let p = header.dims;
        if bytes.len() != (header.k + 1) * p * 8 || header.shape.len() != p {
            return Err(Error::DimensionMismatch {
                expected: (header.k + 1) * p * 8,
                found: bytes.len(),
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let (mean, components) = values.split_at(p);
        Self::new(
            header.kind,
            header.shape,
            mean.to_vec(),
            components.to_vec(),
            header.eigenvalues,
            header.total_variance,
        )
    }
}

const FORMAT: &str = "dsvis-component-basis";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BasisHeader {
    format: String,
    version: u32,
    kind: BasisKind,
    shape: Shape,
    dims: usize,
    k: usize,
    eigenvalues: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
    total_variance: f64,
    data: DataLayout,
}

#[derive(Serialize, Deserialize)]
struct DataLayout {
    file: PathBuf,
    dtype: String,
    rows: usize,
    cols: usize,
    layout: String,
}

/// Flips `v` so that its entry of largest magnitude is positive.
/// Returns whether the vector was negated.
pub fn orient_sign(v: &mut [f64]) -> bool {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
        true
    } else {
        false
    }
}
