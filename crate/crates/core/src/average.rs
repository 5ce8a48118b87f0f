//! Per-group mean images.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{decode_image, load_image, DatasetManifest, ImageBuffer, LoadOptions};

const LOAD_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct AverageOptions {
    pub load: LoadOptions,
    /// Groups with fewer members are dropped.
    pub min_n: usize,
    pub split: Option<String>,
}

impl AverageOptions {
    pub fn new(load: LoadOptions) -> Self {
        Self {
            load,
            min_n: 2,
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageEntry {
    pub value: String,
    pub mean: ImageBuffer,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageImageSet {
    pub group_key: String,
    /// Sorted by descending `n`, ties by value.
    pub entries: Vec<AverageEntry>,
    /// `(width, height)`
    pub target_size: (usize, usize),
    pub skipped_missing_key: usize,
    /// Groups below `min_n`, as `(value, n)`.
    pub omitted: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageIndexEntry {
    pub value: String,
    pub n: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageIndex {
    pub group_key: String,
    pub width: usize,
    pub height: usize,
    pub entries: Vec<AverageIndexEntry>,
    pub skipped_missing_key: usize,
    pub omitted: Vec<(String, usize)>,
}

impl AverageImageSet {
    pub fn file_name(&self, entry: &AverageEntry) -> String {
        format!(
            "{}={}_n{}.png",
            sanitize(&self.group_key),
            sanitize(&entry.value),
            entry.n
        )
    }

    pub fn index(&self) -> AverageIndex {
        AverageIndex {
            group_key: self.group_key.clone(),
            width: self.target_size.0,
            height: self.target_size.1,
            entries: self
                .entries
                .iter()
                .map(|e| AverageIndexEntry {
                    value: e.value.clone(),
                    n: e.n,
                    file: self.file_name(e),
                })
                .collect(),
            skipped_missing_key: self.skipped_missing_key,
            omitted: self.omitted.clone(),
        }
    }

    /// Writes one PNG per group and `index.json`; returns the PNG paths.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let path = dir.join(self.file_name(e));
            e.mean.save_png(&path)?;
            written.push(path);
        }
        let index_path = dir.join("index.json");
        let json = serde_json::to_vec_pretty(&self.index())?;
        std::fs::write(&index_path, json).map_err(|e| Error::io(&index_path, e))?;
        Ok(written)
    }

    /// Reads a set written by [`AverageImageSet::save`]. Means come back
    /// 8-bit quantized.
    pub fn load(dir: &Path) -> Result<AverageImageSet> {
        let index_path = dir.join("index.json");
        let text = std::fs::read(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: AverageIndex = serde_json::from_slice(&text)?;
        let entries = index
            .entries
            .into_iter()
            .map(|e| {
                let path = dir.join(&e.file);
                let mean = decode_image(&path).map_err(|message| Error::Decode {
                    id: e.value.clone(),
                    path: path.clone(),
                    message,
                })?;
                Ok(AverageEntry {
                    value: e.value,
                    mean,
                    n: e.n,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AverageImageSet {
            group_key: index.group_key,
            entries,
            target_size: (index.width, index.height),
            skipped_missing_key: index.skipped_missing_key,
            omitted: index.omitted,
        })
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Pixel-wise arithmetic mean, accumulated in the given order.
pub fn mean_image(images: &[ImageBuffer]) -> Result<ImageBuffer> {
    let first = images.first().ok_or(Error::EmptySelection(None))?;
    let mut acc = vec![0.0; first.pixels().len()];
    for (i, img) in images.iter().enumerate() {
        accumulate(&mut acc, i + 1, first, img, "<memory>")?;
    }
    finish(first, acc)
}

/// Running-mean update with the `count`-th image; identical inputs leave
/// the mean bit-for-bit unchanged.
fn accumulate(
    mean: &mut [f64],
    count: usize,
    first: &ImageBuffer,
    img: &ImageBuffer,
    id: &str,
) -> Result<()> {
    if img.channels() != first.channels() {
        return Err(Error::ChannelMismatch {
            id: id.to_string(),
            expected: first.channels(),
            found: img.channels(),
        });
    }
    if img.width() != first.width() || img.height() != first.height() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            found: img.pixels().len(),
        });
    }
    let n = count as f64;
    for (m, v) in mean.iter_mut().zip(img.pixels()) {
        *m += (v - *m) / n;
    }
    Ok(())
}

fn finish(first: &ImageBuffer, mean: Vec<f64>) -> Result<ImageBuffer> {
    let pixels = mean.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    ImageBuffer::new(first.width(), first.height(), first.channels(), pixels)
}

/// Mean image per value of `group_key` (`"label"` or a metadata key).
/// Members are summed in ascending id order, so the result is independent
/// of manifest order.
pub fn average_images(
    manifest: &DatasetManifest,
    group_key: &str,
    opts: &AverageOptions,
) -> Result<AverageImageSet> {
    let target_size = opts
        .load
        .target_size
        .ok_or_else(|| Error::invalid("average images need a target size"))?;
    opts.load.validate()?;

    let mut groups: BTreeMap<&str, Vec<&crate::ingest::SampleRecord>> = BTreeMap::new();
    let mut skipped = 0;
    for r in manifest.select(opts.split.as_deref()) {
        match r.key_value(group_key) {
            Some(v) => groups.entry(v).or_default().push(r),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} samples lack {group_key:?} and were skipped");
    }
    if groups.is_empty() {
        return Err(Error::EmptySelection(Some(format!(
            "no samples carry {group_key:?}"
        ))));
    }

    let mut entries = Vec::new();
    let mut omitted = Vec::new();
    for (value, mut members) in groups {
        if members.len() < opts.min_n.max(1) {
            log::warn!(
                "group {group_key}={value} has {} members (< {}); omitted",
                members.len(),
                opts.min_n
            );
            omitted.push((value.to_string(), members.len()));
            continue;
        }
        members.sort_by(|a, b| a.id.cmp(&b.id));
        let mut acc: Option<(ImageBuffer, Vec<f64>, usize)> = None;
        for batch in members.chunks(LOAD_BATCH) {
            let loaded: Vec<Result<ImageBuffer>> = batch
                .par_iter()
                .map(|r| load_image(r, manifest.root(), &opts.load))
                .collect();
            for (img, r) in loaded.into_iter().zip(batch) {
                let img = img?;
                let (first, mean, count) =
                    acc.get_or_insert_with(|| (img.clone(), vec![0.0; img.pixels().len()], 0));
                *count += 1;
                accumulate(mean, *count, first, &img, &r.id)?;
            }
        }
        let (first, mean, _) = acc.expect("non-empty group");
        entries.push(AverageEntry {
            value: value.to_string(),
            mean: finish(&first, mean)?,
            n: members.len(),
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptySelection(Some(format!(
            "every {group_key:?} group has fewer than {} members",
            opts.min_n
        ))));
    }
    entries.sort_by(|a, b| b.n.cmp(&a.n).then_with(|| a.value.cmp(&b.value)));
    Ok(AverageImageSet {
        group_key: group_key.to_string(),
        entries,
        target_size,
        skipped_missing_key: skipped,
        omitted,
    })
}
