use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in integer pixels of the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    /// Checks the box against the dimensions of the decoded image.
    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x as usize + self.w as usize <= width && self.y as usize + self.h as usize <= height
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.x, self.y, self.w, self.h].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let [x, y, w, h] = <[i64; 4]>::deserialize(d)?;
        if x < 0 || y < 0 {
            return Err(D::Error::custom(format!(
                "bbox origin must be non-negative, got ({x}, {y})"
            )));
        }
        if w < 1 || h < 1 {
            return Err(D::Error::custom(format!(
                "bbox width and height must be at least 1, got {w}x{h}"
            )));
        }
        let conv = |v: i64| u32::try_from(v).map_err(|_| D::Error::custom("bbox value too large"));
        Ok(BoundingBox {
            x: conv(x)?,
            y: conv(y)?,
            w: conv(w)?,
            h: conv(h)?,
        })
    }
}

/// One line of the JSONL manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub image: PathBuf,
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, image: impl Into<PathBuf>, split: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image: image.into(),
            split: split.into(),
            label: None,
            bbox: None,
            mask: None,
            metadata: BTreeMap::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidRecord {
                id: self.id.clone(),
                message: "empty id".into(),
            });
        }
        if self.metadata.keys().any(|k| k.is_empty()) {
            return Err(Error::InvalidRecord {
                id: self.id.clone(),
                message: "metadata keys must be non-empty".into(),
            });
        }
        if let Some(b) = self.bbox {
            if b.w == 0 || b.h == 0 {
                return Err(Error::InvalidRecord {
                    id: self.id.clone(),
                    message: "bbox width and height must be at least 1".into(),
                });
            }
        }
        Ok(())
    }

    /// Value of a grouping key: `"label"` reads the label, anything else a
    /// metadata entry.
    pub fn key_value(&self, key: &str) -> Option<&str> {
        if key == "label" {
            self.label.as_deref()
        } else {
            self.metadata.get(key).map(String::as_str)
        }
    }
}

/// An ordered collection of samples with unique ids, resolved against `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    samples: Vec<SampleRecord>,
    root: PathBuf,
    class_names: Option<Vec<String>>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, samples: Vec<SampleRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self {
            samples,
            root: root.into(),
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        self.class_names = Some(names);
        self
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Samples in manifest order, optionally restricted to one split.
    pub fn select<'a>(&'a self, split: Option<&'a str>) -> impl Iterator<Item = &'a SampleRecord> {
        self.samples
            .iter()
            .filter(move |s| split.is_none_or(|sp| s.split == sp))
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Parses a JSON-lines manifest. Relative image and mask paths resolve
/// against the manifest's directory. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let record: SampleRecord =
            serde_json::from_str(trimmed).map_err(|e| Error::ManifestLine {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        record.validate().map_err(|e| Error::ManifestLine {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        samples.push(record);
    }
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    DatasetManifest::new(root, samples)
}
