use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use base64::Engine as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    render_average_sheet, render_component_grid, render_difference, render_heatmap, RenderSpec,
};
use crate::ablation::AblationReport;
use crate::average::AverageImageSet;
use crate::components::ComponentBasis;
use crate::error::{Error, Result};
use crate::ingest::{probe_image, DatasetManifest, ImageBuffer};
use crate::spatial::{HeatmapComparison, SpatialHeatmap};

/// JSON schema the report JSON conforms to.
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

const REPORT_FORMAT: &str = "dsvis-report";
const REPORT_VERSION: u32 = 1;

const ASPECT_EDGES: [f64; 7] = [0.0, 0.5, 0.75, 0.9, 1.1, 1.5, 2.0];
const SIDE_EDGES: [f64; 6] = [0.0, 64.0, 128.0, 256.0, 512.0, 1024.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub label: String,
    pub lo: f64,
    /// `None` for the open last bin.
    pub hi: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    fn build(edges: &[f64], values: impl Iterator<Item = f64>) -> Self {
        let mut bins: Vec<HistogramBin> = edges
            .iter()
            .enumerate()
            .map(|(i, &lo)| {
                let hi = edges.get(i + 1).copied();
                HistogramBin {
                    label: match hi {
                        Some(hi) => format!("[{lo}, {hi})"),
                        None => format!(">= {lo}"),
                    },
                    lo,
                    hi,
                    count: 0,
                }
            })
            .collect();
        for v in values {
            let i = edges.iter().rposition(|&e| v >= e).unwrap_or(0);
            bins[i].count += 1;
        }
        Histogram { bins }
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Image size statistics of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_images: usize,
    pub n_unreadable: usize,
    /// Width over height.
    pub aspect_ratio: Histogram,
    /// Shorter side in pixels.
    pub resolution: Histogram,
}

/// Reads image headers only; unreadable files are counted, not fatal.
pub fn dataset_stats(manifest: &DatasetManifest, split: Option<&str>) -> DatasetStats {
    let records: Vec<_> = manifest.select(split).collect();
    let sizes: Vec<Option<(usize, usize)>> = records
        .par_iter()
        .map(|r| match probe_image(&manifest.resolve(&r.image)) {
            Ok((w, h, _)) => Some((w, h)),
            Err(e) => {
                log::warn!("cannot read {}: {e}", r.id);
                None
            }
        })
        .collect();
    let ok: Vec<(usize, usize)> = sizes.iter().flatten().copied().collect();
    DatasetStats {
        n_images: ok.len(),
        n_unreadable: sizes.len() - ok.len(),
        aspect_ratio: Histogram::build(&ASPECT_EDGES, ok.iter().map(|&(w, h)| w as f64 / h as f64)),
        resolution: Histogram::build(&SIDE_EDGES, ok.iter().map(|&(w, h)| w.min(h) as f64)),
    }
}

/// Analysis outputs to include in a report. Absent parts are left out.
#[derive(Debug, Clone, Default)]
pub struct ReportBundle<'a> {
    pub title: Option<String>,
    pub pca: Option<&'a ComponentBasis>,
    pub ica: Option<&'a ComponentBasis>,
    pub heatmaps: Vec<&'a SpatialHeatmap>,
    /// `(label a, label b, comparison)`
    pub comparisons: Vec<(String, String, &'a HeatmapComparison)>,
    pub average: Option<&'a AverageImageSet>,
    pub ablation: Option<&'a AblationReport>,
    pub metadata: Option<&'a DatasetStats>,
    pub seed: Option<u64>,
    pub render: RenderSpec,
}

impl ReportBundle<'_> {
    pub fn is_empty(&self) -> bool {
        self.pca.is_none()
            && self.ica.is_none()
            && self.heatmaps.is_empty()
            && self.comparisons.is_empty()
            && self.average.is_none()
            && self.ablation.is_none()
            && self.metadata.is_none()
    }

    /// Machine-readable summary; conforms to [`REPORT_SCHEMA`].
    pub fn to_json(&self) -> Result<Value> {
        if self.is_empty() {
            return Err(Error::EmptySelection(Some("report bundle is empty".into())));
        }
        let mut out = serde_json::Map::new();
        out.insert("format".into(), json!(REPORT_FORMAT));
        out.insert("version".into(), json!(REPORT_VERSION));
        out.insert("seed".into(), json!(self.seed));
        if let Some(b) = self.pca {
            out.insert("pca".into(), basis_json(b));
        }
        if let Some(b) = self.ica {
            out.insert("ica".into(), basis_json(b));
        }
        if !self.heatmaps.is_empty() || !self.comparisons.is_empty() {
            let heatmaps: Vec<Value> = self
                .heatmaps
                .iter()
                .map(|h| serde_json::to_value(h.summary()))
                .collect::<std::result::Result<_, _>>()?;
            let comparisons: Vec<Value> = self
                .comparisons
                .iter()
                .map(
                    |(a, b, c)| json!({ "a": a, "b": b, "l1": c.l1, "correlation": c.correlation }),
                )
                .collect();
            out.insert(
                "spatial".into(),
                json!({ "heatmaps": heatmaps, "comparisons": comparisons }),
            );
        }
        if let Some(a) = self.average {
            out.insert("average".into(), serde_json::to_value(a.index())?);
        }
        if let Some(a) = self.ablation {
            out.insert("ablation".into(), a.to_json());
        }
        if let Some(m) = self.metadata {
            out.insert("metadata".into(), serde_json::to_value(m)?);
        }
        Ok(Value::Object(out))
    }

    pub fn to_html(&self) -> Result<String> {
        if self.is_empty() {
            return Err(Error::EmptySelection(Some("report bundle is empty".into())));
        }
        let title = self.title.as_deref().unwrap_or("Dataset report");
        let mut h = String::new();
        let _ = write!(
            h,
            "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n\
             <style>body{{font-family:sans-serif;margin:2em;max-width:72em}}\
             img{{image-rendering:pixelated;border:1px solid #ccc;margin:4px}}\
             table{{border-collapse:collapse}}td,th{{border:1px solid #ccc;padding:2px 8px;text-align:right}}\
             </style>\n</head>\n<body>\n<h1>{}</h1>\n",
            escape(title),
            escape(title)
        );
        if let Some(seed) = self.seed {
            let _ = writeln!(h, "<p>seed: {seed}</p>");
        }
        for (name, basis) in [("PCA", self.pca), ("ICA", self.ica)] {
            let Some(b) = basis else { continue };
            let spec = RenderSpec {
                top_k: self.render.top_k.min(b.k()),
                ..self.render
            };
            let grid = render_component_grid(b, &spec)?;
            let _ = writeln!(h, "<section>\n<h2>{name}</h2>");
            let _ = writeln!(
                h,
                "<p>{} components of dimension {}; total variance {:.6e}</p>",
                b.k(),
                b.dims(),
                b.total_variance()
            );
            h.push_str(&img_tag(&grid, &format!("{name} components"))?);
            h.push_str("\n<table><tr><th>#</th><th>eigenvalue</th><th>explained</th></tr>\n");
            for (i, (l, r)) in b
                .eigenvalues()
                .iter()
                .zip(b.explained_variance_ratio())
                .enumerate()
            {
                let _ = writeln!(
                    h,
                    "<tr><td>{}</td><td>{l:.6e}</td><td>{:.2}%</td></tr>",
                    i + 1,
                    100.0 * r
                );
            }
            h.push_str("</table>\n</section>\n");
        }
        if !self.heatmaps.is_empty() || !self.comparisons.is_empty() {
            h.push_str("<section>\n<h2>Spatial distribution</h2>\n");
            for hm in &self.heatmaps {
                let label = format!(
                    "{} ({}, n = {})",
                    hm.category,
                    hm.split.as_deref().unwrap_or("all splits"),
                    hm.n_samples
                );
                let _ = write!(h, "<figure>");
                h.push_str(&img_tag(&render_heatmap(hm, &self.render), &label)?);
                let _ = writeln!(h, "<figcaption>{}</figcaption></figure>", escape(&label));
            }
            for (a, b, c) in &self.comparisons {
                let label = format!("{a} minus {b}");
                let _ = write!(h, "<figure>");
                h.push_str(&img_tag(&render_difference(c), &label)?);
                let corr = c
                    .correlation
                    .map(|r| format!("{r:.4}"))
                    .unwrap_or_else(|| "undefined".into());
                let _ = writeln!(
                    h,
                    "<figcaption>{}: L1 = {:.4}, correlation = {corr}</figcaption></figure>",
                    escape(&label),
                    c.l1
                );
            }
            h.push_str("</section>\n");
        }
        if let Some(a) = self.average {
            let _ = writeln!(
                h,
                "<section>\n<h2>Average images by {}</h2>",
                escape(&a.group_key)
            );
            h.push_str(&img_tag(
                &render_average_sheet(a, &self.render)?,
                "average images",
            )?);
            h.push_str("\n<table><tr><th>group</th><th>n</th></tr>\n");
            for e in &a.entries {
                let _ = writeln!(h, "<tr><td>{}</td><td>{}</td></tr>", escape(&e.value), e.n);
            }
            h.push_str("</table>\n</section>\n");
        }
        if let Some(a) = self.ablation {
            let _ = writeln!(
                h,
                "<section>\n<h2>Channel ablation</h2>\n<pre>{}</pre>\n</section>",
                escape(&a.to_table())
            );
        }
        if let Some(m) = self.metadata {
            let _ = writeln!(
                h,
                "<section>\n<h2>Image sizes</h2>\n<p>{} images read, {} unreadable</p>",
                m.n_images, m.n_unreadable
            );
            for (name, hist) in [
                ("aspect ratio (w/h)", &m.aspect_ratio),
                ("shorter side (px)", &m.resolution),
            ] {
                let _ = writeln!(h, "<h3>{name}</h3>\n<table>");
                for b in &hist.bins {
                    let _ = writeln!(
                        h,
                        "<tr><td>{}</td><td>{}</td></tr>",
                        escape(&b.label),
                        b.count
                    );
                }
                h.push_str("</table>\n");
            }
            h.push_str("</section>\n");
        }
        h.push_str("</body>\n</html>\n");
        Ok(h)
    }
}

fn basis_json(b: &ComponentBasis) -> Value {
    json!({
        "kind": b.kind(),
        "k": b.k(),
        "dims": b.dims(),
        "shape": b.shape(),
        "eigenvalues": b.eigenvalues(),
        "explained_variance_ratio": b.explained_variance_ratio(),
        "total_variance": b.total_variance(),
    })
}

fn img_tag(img: &ImageBuffer, alt: &str) -> Result<String> {
    let png = img.encode_png()?;
    Ok(format!(
        "<img alt=\"{}\" src=\"data:image/png;base64,{}\">",
        escape(alt),
        base64::engine::general_purpose::STANDARD.encode(png)
    ))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub html: PathBuf,
    pub json: PathBuf,
}

/// Writes `report.html` (images embedded) and `report.json` into `out_dir`.
pub fn render_report(bundle: &ReportBundle<'_>, out_dir: &Path) -> Result<ReportFiles> {
    let json = bundle.to_json()?;
    let html = bundle.to_html()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = ReportFiles {
        html: out_dir.join("report.html"),
        json: out_dir.join("report.json"),
    };
    std::fs::write(&files.html, html).map_err(|e| Error::io(&files.html, e))?;
    let bytes = serde_json::to_vec_pretty(&json)?;
    std::fs::write(&files.json, bytes).map_err(|e| Error::io(&files.json, e))?;
    Ok(files)
}
