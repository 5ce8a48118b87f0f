//! Color-channel ablation of datasets and top-1 scoring of external predictions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{decode_image, DatasetManifest, ImageBuffer, SampleRecord};

const EMIT_BATCH: usize = 64;
const MAX_LISTED: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Red,
    Green,
    Blue,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Red, Channel::Green, Channel::Blue];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Red => "red",
            Channel::Green => "green",
            Channel::Blue => "blue",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "red" | "r" => Ok(Channel::Red),
            "green" | "g" => Ok(Channel::Green),
            "blue" | "b" => Ok(Channel::Blue),
            _ => Err(Error::invalid(format!(
                "unknown channel {s:?} (expected red, green or blue)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Channel replaced by the mean of the two others.
    MeanOfOthers,
    /// Channel replaced by the mean of all three.
    Gray,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::MeanOfOthers => "mean_of_others",
            Strategy::Gray => "gray",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mean_of_others" => Ok(Strategy::MeanOfOthers),
            "gray" | "grey" => Ok(Strategy::Gray),
            _ => Err(Error::invalid(format!(
                "unknown strategy {s:?} (expected mean_of_others or gray)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AblationSpec {
    pub channel: Channel,
    pub strategy: Strategy,
}

impl AblationSpec {
    pub fn new(channel: Channel, strategy: Strategy) -> Self {
        Self { channel, strategy }
    }

    /// Applies the spec to one RGB pixel in place.
    pub fn apply_pixel(&self, px: &mut [f64]) {
        let c = self.channel.index();
        let (a, b) = ((c + 1) % 3, (c + 2) % 3);
        px[c] = match self.strategy {
            Strategy::MeanOfOthers => (px[a] + px[b]) / 2.0,
            // (v, v, v) -> v exactly
            Strategy::Gray => (px[c] + ((px[a] - px[c]) + (px[b] - px[c])) / 3.0).clamp(0.0, 1.0),
        };
    }
}

impl fmt::Display for AblationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.channel, self.strategy)
    }
}

pub fn ablate_channel(image: &ImageBuffer, spec: AblationSpec) -> Result<ImageBuffer> {
    if image.channels() != 3 {
        return Err(Error::ChannelMismatch {
            id: "<image>".into(),
            expected: 3,
            found: image.channels(),
        });
    }
    let mut out = image.clone();
    for y in 0..out.height() {
        for x in 0..out.width() {
            spec.apply_pixel(out.pixel_mut(x, y));
        }
    }
    Ok(out)
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Unique output file names derived from ids.
fn output_names(samples: &[SampleRecord]) -> Vec<String> {
    let mut used = HashSet::new();
    samples
        .iter()
        .map(|s| {
            let stem = file_stem_for(&s.id);
            let mut name = format!("{stem}.png");
            let mut n = 1;
            while !used.insert(name.clone()) {
                name = format!("{stem}-{n}.png");
                n += 1;
            }
            name
        })
        .collect()
}

fn emit_one(
    manifest: &DatasetManifest,
    record: &SampleRecord,
    spec: AblationSpec,
    path: &Path,
) -> Result<()> {
    let src = manifest.resolve(&record.image);
    let img = decode_image(&src).map_err(|message| Error::Decode {
        id: record.id.clone(),
        path: src.clone(),
        message,
    })?;
    ablate_channel(&img.to_rgb(), spec)?.save_png(path)
}

/// Writes an ablated PNG per sample under `outdir/images` and a mirrored
/// `outdir/manifest.jsonl`. Single-channel inputs are expanded to RGB first.
/// On failure every file written by this call is removed.
pub fn emit_ablated_dataset(
    manifest: &DatasetManifest,
    spec: AblationSpec,
    outdir: &Path,
) -> Result<DatasetManifest> {
    let images_dir = outdir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let names = output_names(manifest.samples());
    let mut written: Vec<PathBuf> = Vec::with_capacity(names.len());

    let result = (|| {
        let items: Vec<(&SampleRecord, &String)> = manifest.samples().iter().zip(&names).collect();
        for batch in items.chunks(EMIT_BATCH) {
            let results: Vec<(PathBuf, Result<()>)> = batch
                .par_iter()
                .map(|(r, name)| {
                    let path = images_dir.join(name);
                    let res = emit_one(manifest, r, spec, &path);
                    (path, res)
                })
                .collect();
            let mut first_err = None;
            for (path, res) in results {
                match res {
                    Ok(()) => written.push(path),
                    Err(e) => {
                        if path.exists() {
                            written.push(path);
                        }
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
        let samples = manifest
            .samples()
            .iter()
            .zip(&names)
            .map(|(r, name)| {
                let mut out = r.clone();
                out.image = Path::new("images").join(name);
                out.mask = r.mask.as_ref().map(|m| manifest.resolve(m));
                out
            })
            .collect();
        let mut ablated = DatasetManifest::new(outdir, samples)?;
        if let Some(names) = manifest.class_names() {
            ablated = ablated.with_class_names(names.to_vec());
        }
        let manifest_path = outdir.join("manifest.jsonl");
        written.push(manifest_path.clone());
        ablated.write_jsonl(&manifest_path)?;
        Ok(ablated)
    })();

    if result.is_err() {
        for p in &written {
            let _ = std::fs::remove_file(p);
        }
    }
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub accuracy: f64,
    pub correct: usize,
    pub n_scored: usize,
    /// Prediction rows whose id is not a labeled manifest sample.
    pub ignored: usize,
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    sample_id: String,
    prediction: String,
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let err = |message: String| Error::Predictions {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    if headers != ["sample_id", "prediction"] {
        return Err(err(format!(
            "expected header `sample_id,prediction`, found `{}`",
            headers.join(",")
        )));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| err(format!("row {}: {e}", i + 2))))
        .collect()
}

fn listed(ids: &[&str]) -> String {
    let mut s = ids
        .iter()
        .take(MAX_LISTED)
        .copied()
        .collect::<Vec<_>>()
        .join(", ");
    if ids.len() > MAX_LISTED {
        s.push_str(&format!(" and {} more", ids.len() - MAX_LISTED));
    }
    s
}

/// Top-1 accuracy of a `sample_id,prediction` CSV against manifest labels.
/// Every labeled sample must appear exactly once.
pub fn score_predictions(manifest: &DatasetManifest, predictions: &Path) -> Result<Score> {
    score_with_ids(manifest, predictions).map(|(score, _)| score)
}

fn score_with_ids(
    manifest: &DatasetManifest,
    predictions: &Path,
) -> Result<(Score, BTreeSet<String>)> {
    let labels: HashMap<&str, &str> = manifest
        .samples()
        .iter()
        .filter_map(|s| s.label.as_deref().map(|l| (s.id.as_str(), l)))
        .collect();
    if labels.is_empty() {
        return Err(Error::EmptySelection(Some(
            "manifest has no labeled samples to score".into(),
        )));
    }
    let rows = read_predictions(predictions)?;
    let err = |message: String| Error::Predictions {
        path: predictions.to_path_buf(),
        message,
    };

    let mut seen: HashMap<&str, &str> = HashMap::with_capacity(rows.len());
    let mut duplicates = BTreeSet::new();
    for row in &rows {
        if seen.insert(&row.sample_id, &row.prediction).is_some() {
            duplicates.insert(row.sample_id.as_str());
        }
    }
    if !duplicates.is_empty() {
        let d: Vec<&str> = duplicates.into_iter().collect();
        return Err(err(format!("duplicate sample_id: {}", listed(&d))));
    }
    let mut missing: Vec<&str> = labels
        .keys()
        .copied()
        .filter(|id| !seen.contains_key(id))
        .collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        return Err(err(format!(
            "{} labeled samples have no prediction: {}",
            missing.len(),
            listed(&missing)
        )));
    }
    let correct = labels
        .iter()
        .filter(|(id, label)| seen[*id] == **label)
        .count();
    let ignored = rows.len() - labels.len();
    if ignored > 0 {
        log::warn!(
            "{ignored} prediction rows in {} do not match a labeled sample",
            predictions.display()
        );
    }
    let ids = seen.keys().map(|s| s.to_string()).collect();
    Ok((
        Score {
            accuracy: correct as f64 / labels.len() as f64,
            correct,
            n_scored: labels.len(),
            ignored,
        },
        ids,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub channel: Channel,
    pub strategy: Strategy,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline: f64,
    /// Ordered red, green, blue; strategies within a channel in declaration order.
    pub rows: Vec<AblationRow>,
    pub n_scored: usize,
}

impl AblationReport {
    pub fn accuracy(&self, spec: AblationSpec) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.channel == spec.channel && r.strategy == spec.strategy)
            .map(|r| r.accuracy)
    }

    /// Aligned text table: one row per channel, one column per strategy,
    /// accuracies in percent.
    pub fn to_table(&self) -> String {
        let strategies: Vec<Strategy> = [Strategy::MeanOfOthers, Strategy::Gray]
            .into_iter()
            .filter(|s| self.rows.iter().any(|r| r.strategy == *s))
            .collect();
        let header_cells: Vec<&str> = strategies
            .iter()
            .map(|s| match s {
                Strategy::MeanOfOthers => "Mean of other channels",
                Strategy::Gray => "Gray image",
            })
            .collect();
        let first_width = "Mask channel".len();
        let widths: Vec<usize> = header_cells.iter().map(|h| h.len().max(7)).collect();
        let mut out = format!("{:<first_width$}", "Mask channel");
        for (h, w) in header_cells.iter().zip(&widths) {
            out.push_str(&format!(" | {h:>w$}"));
        }
        out.push('\n');
        out.push_str(&"-".repeat(out.len() - 1));
        out.push('\n');
        for ch in Channel::ALL {
            if !self.rows.iter().any(|r| r.channel == ch) {
                continue;
            }
            out.push_str(&format!("{:<first_width$}", capitalize(ch.name())));
            for (s, w) in strategies.iter().zip(&widths) {
                let cell = self
                    .accuracy(AblationSpec::new(ch, *s))
                    .map(|a| format!("{:.2}%", 100.0 * a))
                    .unwrap_or_else(|| "-".into());
                out.push_str(&format!(" | {cell:>w$}"));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "Baseline accuracy: {:.2}% (n = {})\n",
            100.0 * self.baseline,
            self.n_scored
        ));
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

/// Scores a baseline file and one file per ablation spec. All files must
/// cover the same set of sample ids.
pub fn ablation_report(
    baseline: &Path,
    variants: &BTreeMap<AblationSpec, PathBuf>,
    manifest: &DatasetManifest,
) -> Result<AblationReport> {
    let (base, base_ids) = score_with_ids(manifest, baseline)?;
    let mut rows = Vec::with_capacity(variants.len());
    for (spec, path) in variants {
        let (score, ids) = score_with_ids(manifest, path)?;
        if ids != base_ids {
            let extra: Vec<&str> = ids
                .symmetric_difference(&base_ids)
                .map(String::as_str)
                .collect();
            return Err(Error::Predictions {
                path: path.clone(),
                message: format!(
                    "sample coverage differs from {}: {}",
                    baseline.display(),
                    listed(&extra)
                ),
            });
        }
        rows.push(AblationRow {
            channel: spec.channel,
            strategy: spec.strategy,
            accuracy: score.accuracy,
        });
    }
    Ok(AblationReport {
        baseline: base.accuracy,
        rows,
        n_scored: base.n_scored,
    })
}
