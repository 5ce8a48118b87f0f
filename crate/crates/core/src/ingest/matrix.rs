use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::{load_image, ImageBuffer, LoadOptions};
use super::manifest::{DatasetManifest, SampleRecord};
use crate::error::{Error, Result};

/// `(height, width, channels)` of the image each matrix row was flattened from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    /// Shape used for rows that are not images (scores, projections).
    pub fn flat(len: usize) -> Self {
        Self::new(1, len, 1)
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_image(&self) -> bool {
        self.channels == 1 || self.channels == 3
    }
}

/// Dense `n x p` row-major matrix of flattened images or patches.
///
/// Rows are flattened in `(y, x, c)` order, so entry `(y * width + x) *
/// channels + c` of a row is channel `c` of pixel `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    shape: Shape,
    data: Vec<f64>,
    row_ids: Option<Vec<String>>,
}

impl DataMatrix {
    pub fn new(shape: Shape, data: Vec<f64>, row_ids: Option<Vec<String>>) -> Result<Self> {
        let p = shape.len();
        if p == 0 {
            return Err(Error::invalid("matrix rows must have at least one entry"));
        }
        if data.len() % p != 0 {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: data.len() % p,
            });
        }
        let rows = data.len() / p;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i / p,
                col: i % p,
            });
        }
        if let Some(ids) = &row_ids {
            if ids.len() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    found: ids.len(),
                });
            }
        }
        Ok(Self {
            rows,
            shape,
            data,
            row_ids,
        })
    }

    /// Convenience constructor for tests and plain numeric data.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("rows have different lengths"));
        }
        Self::new(Shape::flat(p), rows.concat(), None)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.dims();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dims())
    }

    pub fn row_ids(&self) -> Option<&[String]> {
        self.row_ids.as_deref()
    }

    /// Rebuilds the image a row was flattened from.
    pub fn unflatten_row(&self, i: usize) -> Result<ImageBuffer> {
        unflatten(self.row(i), self.shape)
    }

    pub(crate) fn as_faer(&self) -> faer::MatRef<'_, f64> {
        faer::MatRef::from_row_major_slice(&self.data, self.rows, self.dims())
    }
}

/// Inverse of row flattening. Values are clamped into `[0, 1]`; rows that
/// carry arbitrary reals (scores, components) should be rescaled first.
pub fn unflatten(row: &[f64], shape: Shape) -> Result<ImageBuffer> {
    if row.len() != shape.len() {
        return Err(Error::DimensionMismatch {
            expected: shape.len(),
            found: row.len(),
        });
    }
    ImageBuffer::new(
        shape.width,
        shape.height,
        shape.channels,
        row.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
}

/// Loads every selected sample at `opts.target_size` and stacks the flattened
/// images in manifest order.
pub fn build_data_matrix(
    manifest: &DatasetManifest,
    opts: &LoadOptions,
    split: Option<&str>,
) -> Result<DataMatrix> {
    opts.validate()?;
    let (width, height) = opts.target_size.ok_or_else(|| {
        Error::invalid("build_data_matrix needs a target size so rows share one shape")
    })?;
    let records: Vec<&SampleRecord> = manifest.select(split).collect();
    let first = records
        .first()
        .ok_or_else(|| Error::EmptySelection(split.map(|s| format!("split {s:?}"))))?;

    let first_img = load_image(first, manifest.root(), opts)?;
    let channels = first_img.channels();
    let shape = Shape::new(height, width, channels);
    let p = shape.len();
    let mut data = vec![0.0; records.len() * p];
    data[..p].copy_from_slice(first_img.pixels());

    let results: Vec<Result<()>> = data[p..]
        .par_chunks_mut(p)
        .zip(records[1..].par_iter())
        .map(|(row, rec)| {
            let img = load_image(rec, manifest.root(), opts)?;
            if img.channels() != channels {
                return Err(Error::ChannelMismatch {
                    id: rec.id.clone(),
                    expected: channels,
                    found: img.channels(),
                });
            }
            row.copy_from_slice(img.pixels());
            Ok(())
        })
        .collect();
    // first failure in manifest order, independent of scheduling
    results.into_iter().collect::<Result<()>>()?;

    let ids = records.iter().map(|r| r.id.clone()).collect();
    DataMatrix::new(shape, data, Some(ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::manifest::SampleRecord;
    use proptest::prelude::*;

    #[test]
    fn flatten_order_is_y_x_c() {
        let img = ImageBuffer::new(2, 2, 1, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        // 16-bit PNG keeps thirds close enough to compare at 1/65535
        let raw: Vec<u16> = img
            .pixels()
            .iter()
            .map(|v| (v * 65535.0).round() as u16)
            .collect();
        let g16: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(2, 2, raw).unwrap();
        g16.save(dir.path().join("a.png")).unwrap();
        let m =
            DatasetManifest::new(dir.path(), vec![SampleRecord::new("a", "a.png", "t")]).unwrap();
        let x = build_data_matrix(&m, &LoadOptions::sized(2, 2), None).unwrap();
        assert_eq!(x.rows(), 1);
        assert_eq!(x.dims(), 4);
        for (a, b) in x.row(0).iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(x.row_ids().unwrap(), ["a"]);
    }

    #[test]
    fn five_samples_at_40x40x3() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = Vec::new();
        for i in 0..5 {
            let name = format!("{i}.png");
            ImageBuffer::filled(50 + i, 45, 3, i as f64 / 10.0)
                .save_png(&dir.path().join(&name))
                .unwrap();
            recs.push(SampleRecord::new(i.to_string(), name, "val"));
        }
        let m = DatasetManifest::new(dir.path(), recs).unwrap();
        let x = build_data_matrix(&m, &LoadOptions::sized(40, 40), None).unwrap();
        assert_eq!((x.rows(), x.dims()), (5, 4800));
        assert_eq!(x.shape(), Shape::new(40, 40, 3));
    }

    #[test]
    fn channel_mismatch_without_force_rgb() {
        let dir = tempfile::tempdir().unwrap();
        ImageBuffer::filled(4, 4, 3, 0.5)
            .save_png(&dir.path().join("a.png"))
            .unwrap();
        ImageBuffer::filled(4, 4, 1, 0.5)
            .save_png(&dir.path().join("b.png"))
            .unwrap();
        let m = DatasetManifest::new(
            dir.path(),
            vec![
                SampleRecord::new("a", "a.png", "t"),
                SampleRecord::new("b", "b.png", "t"),
            ],
        )
        .unwrap();
        let err = build_data_matrix(&m, &LoadOptions::sized(4, 4), None).unwrap_err();
        assert!(matches!(err, Error::ChannelMismatch { ref id, .. } if id == "b"));
        let opts = LoadOptions {
            force_rgb: true,
            ..LoadOptions::sized(4, 4)
        };
        let x = build_data_matrix(&m, &opts, None).unwrap();
        assert_eq!(x.dims(), 48);
    }

    #[test]
    fn empty_selection_and_missing_size() {
        let m =
            DatasetManifest::new("/tmp", vec![SampleRecord::new("a", "a.png", "train")]).unwrap();
        assert!(matches!(
            build_data_matrix(&m, &LoadOptions::sized(2, 2), Some("val")),
            Err(Error::EmptySelection(_))
        ));
        assert!(matches!(
            build_data_matrix(&m, &LoadOptions::default(), None),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn missing_image_names_sample() {
        let m = DatasetManifest::new("/nonexistent", vec![SampleRecord::new("q", "q.png", "t")])
            .unwrap();
        match build_data_matrix(&m, &LoadOptions::sized(2, 2), None) {
            Err(Error::Decode { id, .. }) => assert_eq!(id, "q"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            DataMatrix::from_rows(&[vec![1.0, f64::NAN]]),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
    }

    proptest! {
        #[test]
        fn unflatten_then_flatten_is_identity(
            h in 1usize..6, w in 1usize..6, rgb in any::<bool>(), seed in any::<u64>(),
        ) {
            let c = if rgb { 3 } else { 1 };
            let shape = Shape::new(h, w, c);
            let mut s = seed;
            let row: Vec<f64> = (0..shape.len()).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                (s >> 11) as f64 / (1u64 << 53) as f64
            }).collect();
            let x = DataMatrix::new(shape, row.clone(), None).unwrap();
            let img = x.unflatten_row(0).unwrap();
            prop_assert_eq!(img.pixels(), &row[..]);
            prop_assert_eq!((img.width(), img.height(), img.channels()), (w, h, c));
        }
    }
}
