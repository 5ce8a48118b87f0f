//! Spatial distribution of object categories: binarized segmentation masks
//! resized to a common frame, summed, and normalized to `[0, 255]`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{decode_image, DatasetManifest, ImageBuffer, SampleRecord};

pub const DEFAULT_SIZE: (usize, usize) = (640, 640);
const MASK_BATCH: usize = 64;

/// Where the mask of a sample for a given category lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskSource {
    /// The record's `mask` field, used when `metadata["category"]` equals the
    /// category (or, without that entry, when the label does).
    Field,
    /// `<dir>/<id>_<category>.png`, for datasets with one mask per category.
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialHeatmap {
    pub category: String,
    pub split: Option<String>,
    /// `(width, height)`
    pub size: (usize, usize),
    /// Row-major summed coverage before normalization.
    pub counts: Vec<f64>,
    /// Row-major `round(255 * count / max)`, half-up.
    pub normalized: Vec<u8>,
    pub n_samples: usize,
}

impl SpatialHeatmap {
    pub fn from_counts(
        category: impl Into<String>,
        split: Option<String>,
        size: (usize, usize),
        counts: Vec<f64>,
        n_samples: usize,
    ) -> Result<Self> {
        if counts.len() != size.0 * size.1 {
            return Err(Error::DimensionMismatch {
                expected: size.0 * size.1,
                found: counts.len(),
            });
        }
        if counts.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::invalid(
                "heatmap counts must be finite and non-negative",
            ));
        }
        if n_samples == 0 {
            return Err(Error::invalid("a heatmap aggregates at least one mask"));
        }
        let normalized = normalize(&counts);
        Ok(Self {
            category: category.into(),
            split,
            size,
            counts,
            normalized,
            n_samples,
        })
    }

    pub fn max_count(&self) -> f64 {
        self.counts.iter().copied().fold(0.0, f64::max)
    }

    pub fn count_at(&self, x: usize, y: usize) -> f64 {
        self.counts[y * self.size.0 + x]
    }

    pub fn normalized_at(&self, x: usize, y: usize) -> u8 {
        self.normalized[y * self.size.0 + x]
    }

    /// Heatmap built from this one's normalized grid.
    pub fn renormalized(&self) -> SpatialHeatmap {
        let counts = self.normalized.iter().map(|&v| v as f64).collect();
        SpatialHeatmap::from_counts(
            self.category.clone(),
            self.split.clone(),
            self.size,
            counts,
            self.n_samples,
        )
        .expect("normalized grid is a valid count grid")
    }

    pub fn summary(&self) -> HeatmapSummary {
        HeatmapSummary {
            category: self.category.clone(),
            split: self.split.clone(),
            width: self.size.0,
            height: self.size.1,
            n_samples: self.n_samples,
            max_count: self.max_count(),
        }
    }

    /// Grayscale PNG of the normalized grid, plus a JSON summary and a
    /// `.bin` file of the raw counts (little-endian `f64`, row-major) next to it.
    pub fn save(&self, png_path: &Path) -> Result<()> {
        let img = image::GrayImage::from_raw(
            self.size.0 as u32,
            self.size.1 as u32,
            self.normalized.clone(),
        )
        .expect("sized");
        img.save(png_path).map_err(|e| Error::Encode {
            path: png_path.to_path_buf(),
            message: e.to_string(),
        })?;
        let bin_path = png_path.with_extension("bin");
        let bytes: Vec<u8> = self.counts.iter().flat_map(|c| c.to_le_bytes()).collect();
        std::fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
        let file = HeatmapFile {
            summary: self.summary(),
            counts_file: file_name(&bin_path),
            image_file: file_name(png_path),
        };
        let json_path = png_path.with_extension("json");
        let json = serde_json::to_vec_pretty(&file)?;
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
    }

    /// Reads a heatmap written by [`SpatialHeatmap::save`], given its JSON path.
    pub fn load(json_path: &Path) -> Result<SpatialHeatmap> {
        let text = std::fs::read(json_path).map_err(|e| Error::io(json_path, e))?;
        let file: HeatmapFile = serde_json::from_slice(&text)?;
        let bin_path = json_path.with_file_name(&file.counts_file);
        let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::invalid(format!(
                "{} is not a sequence of f64 values",
                bin_path.display()
            )));
        }
        let counts = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let s = file.summary;
        SpatialHeatmap::from_counts(
            s.category,
            s.split,
            (s.width, s.height),
            counts,
            s.n_samples,
        )
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HeatmapFile {
    #[serde(flatten)]
    summary: HeatmapSummary,
    image_file: String,
    counts_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSummary {
    pub category: String,
    pub split: Option<String>,
    pub width: usize,
    pub height: usize,
    pub n_samples: usize,
    pub max_count: f64,
}

/// `round(255 * v / max)` with halves rounded up; all zeros when `max == 0`.
pub fn normalize(counts: &[f64]) -> Vec<u8> {
    let max = counts.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0; counts.len()];
    }
    counts
        .iter()
        .map(|&v| (255.0 * v / max + 0.5).floor().min(255.0) as u8)
        .collect()
}

fn mask_path(
    manifest: &DatasetManifest,
    record: &SampleRecord,
    category: &str,
    source: &MaskSource,
) -> Option<PathBuf> {
    match source {
        MaskSource::Field => {
            let mask = record.mask.as_ref()?;
            let matches = match record.metadata.get("category") {
                Some(c) => c == category,
                None => record.label.as_deref() == Some(category),
            };
            matches.then(|| manifest.resolve(mask))
        }
        MaskSource::Directory(dir) => {
            let path = manifest
                .resolve(dir)
                .join(format!("{}_{category}.png", record.id));
            path.is_file().then_some(path)
        }
    }
}

/// Binary occupancy (any channel nonzero) resized with the area/bilinear
/// resampler, so values carry fractional coverage.
fn load_mask(id: &str, path: &Path, size: (usize, usize)) -> Result<ImageBuffer> {
    let img = decode_image(path).map_err(|message| Error::Decode {
        id: id.to_string(),
        path: path.to_path_buf(),
        message,
    })?;
    let c = img.channels();
    let binary: Vec<f64> = img
        .pixels()
        .chunks_exact(c)
        .map(|px| {
            if px.iter().any(|&v| v > 0.0) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let mask = ImageBuffer::new(img.width(), img.height(), 1, binary)?;
    Ok(mask.resize(size.0, size.1))
}

/// Sums the masks of every selected sample that has one for `category`.
/// Masks are added in ascending id order, so the result does not depend on
/// manifest order or on scheduling.
pub fn aggregate_masks(
    manifest: &DatasetManifest,
    category: &str,
    split: Option<&str>,
    size: (usize, usize),
    source: &MaskSource,
) -> Result<SpatialHeatmap> {
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::invalid("heatmap size must be at least 1x1"));
    }
    let mut selected: Vec<(&str, PathBuf)> = manifest
        .select(split)
        .filter_map(|r| mask_path(manifest, r, category, source).map(|p| (r.id.as_str(), p)))
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection(Some(format!(
            "no masks for category {category:?}{}",
            split
                .map(|s| format!(" in split {s:?}"))
                .unwrap_or_default()
        ))));
    }
    selected.sort_by(|a, b| a.0.cmp(b.0));

    let mut counts = vec![0.0; size.0 * size.1];
    for batch in selected.chunks(MASK_BATCH) {
        let masks: Vec<Result<ImageBuffer>> = batch
            .par_iter()
            .map(|(id, path)| load_mask(id, path, size))
            .collect();
        for mask in masks {
            for (c, v) in counts.iter_mut().zip(mask?.pixels()) {
                *c += v;
            }
        }
    }
    SpatialHeatmap::from_counts(
        category,
        split.map(str::to_string),
        size,
        counts,
        selected.len(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapComparison {
    /// L1 distance between the count grids each scaled to sum 1, in `[0, 2]`.
    pub l1: f64,
    /// Pearson correlation of the count grids; `None` when either grid is constant.
    pub correlation: Option<f64>,
    /// Row-major `a / sum(a) - b / sum(b)`.
    #[serde(skip)]
    pub difference: Vec<f64>,
    pub size: (usize, usize),
}

pub fn compare_heatmaps(a: &SpatialHeatmap, b: &SpatialHeatmap) -> Result<HeatmapComparison> {
    if a.size != b.size {
        return Err(Error::invalid(format!(
            "heatmap sizes differ: {:?} vs {:?}",
            a.size, b.size
        )));
    }
    let sa: f64 = a.counts.iter().sum();
    let sb: f64 = b.counts.iter().sum();
    if sa <= 0.0 || sb <= 0.0 {
        return Err(Error::invalid("cannot compare an empty heatmap"));
    }
    let difference: Vec<f64> = a
        .counts
        .iter()
        .zip(&b.counts)
        .map(|(x, y)| x / sa - y / sb)
        .collect();
    let l1 = difference.iter().map(|d| d.abs()).sum();

    let n = a.counts.len() as f64;
    let (ma, mb) = (sa / n, sb / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.counts.iter().zip(&b.counts) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    let correlation =
        (va > 0.0 && vb > 0.0).then(|| (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0));
    Ok(HeatmapComparison {
        l1,
        correlation,
        difference,
        size: a.size,
    })
}

/// How categories are read from a sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CategorySource {
    Label,
    /// Comma-separated category list stored under this metadata key.
    Metadata(String),
}

impl CategorySource {
    fn categories(&self, r: &SampleRecord) -> BTreeSet<String> {
        let raw = match self {
            CategorySource::Label => r.label.as_deref(),
            CategorySource::Metadata(key) => r.metadata.get(key).map(String::as_str),
        };
        raw.map(|s| {
            s.split(',')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub categories: Vec<String>,
    /// Row-major; entry `(i, j)` counts samples holding both categories.
    pub counts: Vec<u64>,
}

impl CooccurrenceMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<u64> {
        let i = self
            .categories
            .binary_search_by(|c| c.as_str().cmp(a))
            .ok()?;
        let j = self
            .categories
            .binary_search_by(|c| c.as_str().cmp(b))
            .ok()?;
        Some(self.counts[i * self.categories.len() + j])
    }
}

/// Per-sample category sets counted pairwise; categories sorted lexicographically.
pub fn cooccurrence(
    manifest: &DatasetManifest,
    source: &CategorySource,
) -> Result<CooccurrenceMatrix> {
    let sets: Vec<BTreeSet<String>> = manifest
        .samples()
        .iter()
        .map(|r| source.categories(r))
        .filter(|s| !s.is_empty())
        .collect();
    if sets.is_empty() {
        return Err(Error::EmptySelection(Some("no categorized samples".into())));
    }
    let index: BTreeMap<&str, usize> = sets
        .iter()
        .flatten()
        .map(String::as_str)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, i))
        .collect();
    let k = index.len();
    let mut counts = vec![0u64; k * k];
    for set in &sets {
        let ids: Vec<usize> = set.iter().map(|c| index[c.as_str()]).collect();
        for &i in &ids {
            for &j in &ids {
                counts[i * k + j] += 1;
            }
        }
    }
    Ok(CooccurrenceMatrix {
        categories: index.keys().map(|c| c.to_string()).collect(),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn mask_png(dir: &Path, name: &str, w: usize, h: usize, on: &[(usize, usize)]) {
        let mut img = image::GrayImage::new(w as u32, h as u32);
        for &(x, y) in on {
            img.put_pixel(x as u32, y as u32, image::Luma([255]));
        }
        img.save(dir.join(name)).unwrap();
    }

    fn rec(id: &str, mask: &str, cat: &str, split: &str) -> SampleRecord {
        let mut r = SampleRecord::new(id, format!("{id}.png"), split);
        r.mask = Some(mask.into());
        r.metadata.insert("category".into(), cat.into());
        r
    }

    #[test]
    fn two_mask_fixture() {
        let dir = tempfile::tempdir().unwrap();
        mask_png(dir.path(), "a.png", 4, 4, &[(0, 0)]);
        mask_png(dir.path(), "b.png", 4, 4, &[(0, 0), (1, 1)]);
        let m = DatasetManifest::new(
            dir.path(),
            vec![rec("a", "a.png", "cat", "t"), rec("b", "b.png", "cat", "t")],
        )
        .unwrap();
        let h = aggregate_masks(&m, "cat", None, (4, 4), &MaskSource::Field).unwrap();
        assert_eq!(h.n_samples, 2);
        assert_eq!(h.count_at(0, 0), 2.0);
        assert_eq!(h.count_at(1, 1), 1.0);
        assert_eq!(h.normalized_at(0, 0), 255);
        assert_eq!(h.normalized_at(1, 1), 128);
        assert_eq!(h.counts.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn single_mask_scaled_to_255() {
        let dir = tempfile::tempdir().unwrap();
        mask_png(
            dir.path(),
            "a.png",
            8,
            8,
            &[(0, 0), (1, 0), (0, 1), (1, 1), (6, 6)],
        );
        let m = DatasetManifest::new(dir.path(), vec![rec("a", "a.png", "cat", "t")]).unwrap();
        let h = aggregate_masks(&m, "cat", None, (4, 4), &MaskSource::Field).unwrap();
        // 2x2 block fully covered, (6,6) covers a quarter of output (3,3)
        assert_eq!(h.count_at(0, 0), 1.0);
        assert_eq!(h.count_at(3, 3), 0.25);
        assert_eq!(h.normalized_at(0, 0), 255);
        assert_eq!(h.normalized_at(3, 3), 64);
    }

    #[test]
    fn full_frame_masks_are_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let all: Vec<_> = (0..5).flat_map(|x| (0..3).map(move |y| (x, y))).collect();
        mask_png(dir.path(), "a.png", 5, 3, &all);
        mask_png(dir.path(), "b.png", 5, 3, &all);
        let m = DatasetManifest::new(
            dir.path(),
            vec![rec("a", "a.png", "car", "t"), rec("b", "b.png", "car", "t")],
        )
        .unwrap();
        let h = aggregate_masks(&m, "car", None, (16, 16), &MaskSource::Field).unwrap();
        assert!(h.normalized.iter().all(|&v| v == 255));
    }

    #[test]
    fn directory_convention_and_split_filter() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("masks")).unwrap();
        mask_png(&dir.path().join("masks"), "a_dog.png", 4, 4, &[(3, 3)]);
        mask_png(&dir.path().join("masks"), "b_dog.png", 4, 4, &[(0, 0)]);
        let m = DatasetManifest::new(
            dir.path(),
            vec![
                SampleRecord::new("a", "a.png", "train"),
                SampleRecord::new("b", "b.png", "val"),
            ],
        )
        .unwrap();
        let src = MaskSource::Directory("masks".into());
        let h = aggregate_masks(&m, "dog", Some("train"), (4, 4), &src).unwrap();
        assert_eq!(h.n_samples, 1);
        assert_eq!(h.count_at(3, 3), 1.0);
        assert!(matches!(
            aggregate_masks(&m, "cat", None, (4, 4), &src),
            Err(Error::EmptySelection(_))
        ));
    }

    #[test]
    fn label_fallback_without_category_metadata() {
        let dir = tempfile::tempdir().unwrap();
        mask_png(dir.path(), "a.png", 2, 2, &[(1, 0)]);
        let mut r = SampleRecord::new("a", "a.png", "t");
        r.mask = Some("a.png".into());
        r.label = Some("mouse".into());
        let m = DatasetManifest::new(dir.path(), vec![r]).unwrap();
        let h = aggregate_masks(&m, "mouse", None, (2, 2), &MaskSource::Field).unwrap();
        assert_eq!(h.normalized, vec![0, 255, 0, 0]);
    }

    #[test]
    fn normalization_rounds_half_up_and_is_idempotent() {
        assert_eq!(normalize(&[0.0, 1.0, 2.0]), vec![0, 128, 255]);
        assert_eq!(normalize(&[0.0, 0.0]), vec![0, 0]);
        let h = SpatialHeatmap::from_counts("c", None, (3, 1), vec![0.3, 1.7, 9.1], 1).unwrap();
        assert_eq!(h.renormalized().normalized, h.normalized);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = SpatialHeatmap::from_counts(
            "a b",
            Some("val".into()),
            (3, 2),
            vec![0.0, 0.25, 1.5, 2.0, 0.0, 0.1],
            4,
        )
        .unwrap();
        let png = dir.path().join("heatmap.png");
        h.save(&png).unwrap();
        assert_eq!(
            SpatialHeatmap::load(&png.with_extension("json")).unwrap(),
            h
        );
        let img = image::open(&png).unwrap().to_luma8();
        assert_eq!(img.into_raw(), h.normalized);
    }

    #[test]
    fn comparison_identities() {
        let a =
            SpatialHeatmap::from_counts("c", None, (2, 2), vec![1.0, 2.0, 3.0, 4.0], 1).unwrap();
        let c = compare_heatmaps(&a, &a).unwrap();
        assert_eq!(c.l1, 0.0);
        assert!((c.correlation.unwrap() - 1.0).abs() < 1e-15);

        let p =
            SpatialHeatmap::from_counts("c", None, (2, 2), vec![1.0, 0.0, 0.0, 0.0], 1).unwrap();
        let q =
            SpatialHeatmap::from_counts("c", None, (2, 2), vec![0.0, 0.0, 0.0, 5.0], 1).unwrap();
        assert_eq!(compare_heatmaps(&p, &q).unwrap().l1, 2.0);

        let other = SpatialHeatmap::from_counts("c", None, (1, 4), vec![1.0; 4], 1).unwrap();
        assert!(compare_heatmaps(&a, &other).is_err());
    }

    #[test]
    fn cooccurrence_counts() {
        let mut a = SampleRecord::new("a", "a.png", "t");
        a.metadata.insert("categories".into(), "cat, dog".into());
        let mut b = SampleRecord::new("b", "b.png", "t");
        b.metadata.insert("categories".into(), "cat".into());
        let m = DatasetManifest::new("/", vec![a, b]).unwrap();
        let c = cooccurrence(&m, &CategorySource::Metadata("categories".into())).unwrap();
        assert_eq!(c.categories, ["cat", "dog"]);
        assert_eq!(c.get("cat", "cat"), Some(2));
        assert_eq!(c.get("dog", "dog"), Some(1));
        assert_eq!(c.get("cat", "dog"), Some(1));
        assert_eq!(c.get("dog", "cat"), Some(1));

        let mut x = SampleRecord::new("x", "x.png", "t");
        x.label = Some("cat".into());
        let mut y = SampleRecord::new("y", "y.png", "t");
        y.label = Some("dog".into());
        let m = DatasetManifest::new("/", vec![x, y]).unwrap();
        let c = cooccurrence(&m, &CategorySource::Label).unwrap();
        assert_eq!(c.counts, vec![1, 0, 0, 1]);

        let m = DatasetManifest::new("/", vec![SampleRecord::new("z", "z.png", "t")]).unwrap();
        assert!(cooccurrence(&m, &CategorySource::Label).is_err());
    }

    #[test]
    fn cooccurrence_matches_brute_force() {
        let cats = ["bus", "car", "dog", "person", "tree"];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut records = Vec::new();
        let mut sets = Vec::new();
        for i in 0..100 {
            let chosen: Vec<&str> = cats
                .iter()
                .copied()
                .filter(|_| rng.random_bool(0.4))
                .collect();
            let mut r = SampleRecord::new(i.to_string(), "x.png", "t");
            r.metadata.insert("cats".into(), chosen.join(","));
            records.push(r);
            sets.push(chosen);
        }
        let m = DatasetManifest::new("/", records).unwrap();
        let c = cooccurrence(&m, &CategorySource::Metadata("cats".into())).unwrap();
        for a in &c.categories {
            for b in &c.categories {
                let brute = sets
                    .iter()
                    .filter(|s| s.contains(&a.as_str()) && s.contains(&b.as_str()))
                    .count() as u64;
                assert_eq!(c.get(a, b), Some(brute));
            }
        }
    }
}
