//! Visual artifacts: dual-image component cards and grids, colormapped
//! heatmaps, average-image sheets, and the HTML/JSON report.

mod font;
mod report;
mod viridis;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::average::AverageImageSet;
use crate::components::ComponentBasis;
use crate::error::{Error, Result};
use crate::ingest::{unflatten, ImageBuffer, Shape};
use crate::spatial::{HeatmapComparison, SpatialHeatmap};

pub use self::report::{
    dataset_stats, render_report, DatasetStats, Histogram, HistogramBin, ReportBundle, ReportFiles,
    REPORT_SCHEMA,
};

use self::font::{draw_text, text_width, GLYPH_H};

pub const PAD: usize = 4;
pub const TEXT_SCALE: usize = 2;
const BAR_GRAY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    #[default]
    Grayscale,
    Viridis,
}

impl Colormap {
    pub fn color(self, v: u8) -> [u8; 3] {
        match self {
            Colormap::Grayscale => [v, v, v],
            Colormap::Viridis => viridis::VIRIDIS[v as usize],
        }
    }
}

impl FromStr for Colormap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grayscale" | "gray" | "grey" => Ok(Colormap::Grayscale),
            "viridis" | "viridis-like" => Ok(Colormap::Viridis),
            _ => Err(Error::invalid(format!(
                "unknown colormap {s:?} (expected grayscale or viridis)"
            ))),
        }
    }
}

impl fmt::Display for Colormap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Colormap::Grayscale => "grayscale",
            Colormap::Viridis => "viridis",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub top_k: usize,
    /// Integer nearest-neighbour upscale factor for component cells.
    pub cell_scale: usize,
    pub colormap: Colormap,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            top_k: 15,
            cell_scale: 4,
            colormap: Colormap::Grayscale,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        if self.cell_scale == 0 {
            return Err(Error::invalid("cell_scale must be at least 1"));
        }
        Ok(())
    }
}

/// One component drawn as two images: its positive part and its negated
/// negative part, sharing one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentCard {
    /// 1-based.
    pub index: usize,
    pub pos_image: ImageBuffer,
    pub neg_image: ImageBuffer,
    /// `eigenvalue_i / eigenvalue_1`.
    pub bar_fraction: f64,
    pub ratio: f64,
    /// `1 / max |v_j|`.
    pub scale: f64,
}

/// `(s * max(v, 0), s * max(-v, 0), s)` with `s = 1 / max |v|`.
///
/// `s * max |v|` is 1 when some representable `s` gives it, else the
/// largest value below 1.
pub fn split_component(v: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let s = if peak > 0.0 { unit_scale(peak) } else { 0.0 };
    let pos = v.iter().map(|&x| s * x.max(0.0)).collect();
    let neg = v.iter().map(|&x| s * (-x).max(0.0)).collect();
    (pos, neg, s)
}

fn unit_scale(peak: f64) -> f64 {
    let s = 1.0 / peak;
    let step = |x: f64, d: i64| f64::from_bits((x.to_bits() as i64 + d) as u64);
    [0, -1, 1, -2, 2]
        .into_iter()
        .map(|d| step(s, d))
        .find(|&c| c * peak == 1.0)
        .unwrap_or_else(|| {
            let mut c = s;
            while c * peak > 1.0 {
                c = step(c, -1);
            }
            c
        })
}

fn display_shape(shape: Shape) -> Shape {
    if shape.is_image() {
        shape
    } else {
        Shape::flat(shape.len())
    }
}

pub fn render_component_card(
    basis: &ComponentBasis,
    index: usize,
    spec: &RenderSpec,
) -> Result<ComponentCard> {
    spec.validate()?;
    if index == 0 || index > basis.k() {
        return Err(Error::invalid(format!(
            "component index {index} out of range 1..={}",
            basis.k()
        )));
    }
    let v = basis.component(index - 1);
    let (pos, neg, scale) = split_component(v);
    let shape = display_shape(basis.shape());
    let l1 = basis.eigenvalues()[0];
    let li = basis.eigenvalues()[index - 1];
    let bar_fraction = if l1 > 0.0 {
        (li / l1).clamp(0.0, 1.0)
    } else if index == 1 {
        1.0
    } else {
        0.0
    };
    Ok(ComponentCard {
        index,
        pos_image: unflatten(&pos, shape)?.upscale_nearest(spec.cell_scale),
        neg_image: unflatten(&neg, shape)?.upscale_nearest(spec.cell_scale),
        bar_fraction,
        ratio: basis.explained_variance_ratio()[index - 1],
        scale,
    })
}

/// Pixel geometry of a component grid.
///
/// With `cw = width * cell_scale`, `ch = height * cell_scale`, text height
/// `t = 5 * TEXT_SCALE`, label width `lw` (three glyphs), percent width `pw`
/// (six glyphs), bar width `bw = max(2 * cw, 40)` and row height
/// `rh = max(ch, t)`:
///
/// * `width  = 7 * PAD + lw + 2 * cw + bw + pw`
/// * `height = PAD + top_k * (rh + PAD) + t + PAD`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub width: usize,
    pub height: usize,
    pub cell_w: usize,
    pub cell_h: usize,
    pub row_h: usize,
    pub label_w: usize,
    pub bar_w: usize,
    pub pct_w: usize,
    pub text_h: usize,
}

impl GridLayout {
    pub fn new(top_k: usize, shape: Shape, cell_scale: usize) -> Self {
        let shape = display_shape(shape);
        let cell_w = shape.width * cell_scale;
        let cell_h = shape.height * cell_scale;
        let text_h = GLYPH_H * TEXT_SCALE;
        let label_w = text_width("000", TEXT_SCALE);
        let pct_w = text_width("100.0%", TEXT_SCALE);
        let bar_w = (2 * cell_w).max(40);
        let row_h = cell_h.max(text_h);
        Self {
            width: 7 * PAD + label_w + 2 * cell_w + bar_w + pct_w,
            height: PAD + top_k * (row_h + PAD) + text_h + PAD,
            cell_w,
            cell_h,
            row_h,
            label_w,
            bar_w,
            pct_w,
            text_h,
        }
    }

    fn row_y(&self, row: usize) -> usize {
        PAD + row * (self.row_h + PAD)
    }

    fn pos_x(&self) -> usize {
        2 * PAD + self.label_w
    }

    fn neg_x(&self) -> usize {
        self.pos_x() + self.cell_w + PAD
    }

    fn bar_x(&self) -> usize {
        self.neg_x() + self.cell_w + PAD
    }

    fn pct_x(&self) -> usize {
        self.bar_x() + self.bar_w + PAD
    }
}

pub fn grid_dimensions(top_k: usize, shape: Shape, cell_scale: usize) -> (usize, usize) {
    let l = GridLayout::new(top_k, shape, cell_scale);
    (l.width, l.height)
}

/// RGB drawing surface with a white background.
pub(crate) struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Canvas {
    pub(crate) fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![1.0; width * height * 3],
        }
    }

    fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.pixels[i..i + 3].copy_from_slice(&rgb);
        }
    }

    fn fill(&mut self, x0: usize, y0: usize, w: usize, h: usize, rgb: [f64; 3]) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.set(x, y, rgb);
            }
        }
    }

    fn blit(&mut self, img: &ImageBuffer, x0: usize, y0: usize) {
        for y in 0..img.height() {
            for x in 0..img.width() {
                let p = img.pixel(x, y);
                let rgb = if p.len() == 3 {
                    [p[0], p[1], p[2]]
                } else {
                    [p[0]; 3]
                };
                self.set(x0 + x, y0 + y, rgb);
            }
        }
    }

    fn text(&mut self, s: &str, x0: usize, y0: usize) {
        let mut lit = Vec::new();
        draw_text(s, x0, y0, TEXT_SCALE, |x, y| lit.push((x, y)));
        for (x, y) in lit {
            self.set(x, y, [0.0; 3]);
        }
    }

    pub(crate) fn finish(self) -> ImageBuffer {
        ImageBuffer::new(self.width, self.height, 3, self.pixels).expect("canvas is consistent")
    }
}

fn percent(ratio: f64) -> String {
    format!("{:.1}%", 100.0 * ratio)
}

/// Rows of `[index, positive image, negative image, eigenvalue bar, percent]`
/// for the first `top_k` components, then a caption with the cumulative
/// explained-variance percentage. Layout per [`GridLayout`].
pub fn render_component_grid(basis: &ComponentBasis, spec: &RenderSpec) -> Result<ImageBuffer> {
    spec.validate()?;
    if spec.top_k > basis.k() {
        return Err(Error::invalid(format!(
            "top_k {} exceeds the {} available components",
            spec.top_k,
            basis.k()
        )));
    }
    let layout = GridLayout::new(spec.top_k, basis.shape(), spec.cell_scale);
    let mut canvas = Canvas::new(layout.width, layout.height);
    let mut cumulative = 0.0;
    for i in 0..spec.top_k {
        let card = render_component_card(basis, i + 1, spec)?;
        cumulative += card.ratio;
        let y = layout.row_y(i);
        let text_y = y + (layout.row_h - layout.text_h) / 2;
        let cell_y = y + (layout.row_h - layout.cell_h) / 2;
        let label = (i + 1).to_string();
        canvas.text(
            &label,
            PAD + layout.label_w - text_width(&label, TEXT_SCALE),
            text_y,
        );
        canvas.blit(&card.pos_image, layout.pos_x(), cell_y);
        canvas.blit(&card.neg_image, layout.neg_x(), cell_y);
        let bar_h = (layout.row_h / 2).max(1);
        let mut bar_len = (card.bar_fraction * layout.bar_w as f64).round() as usize;
        if card.bar_fraction > 0.0 {
            bar_len = bar_len.max(1);
        }
        canvas.fill(
            layout.bar_x(),
            y + (layout.row_h - bar_h) / 2,
            bar_len,
            bar_h,
            [BAR_GRAY; 3],
        );
        canvas.text(&percent(card.ratio), layout.pct_x(), text_y);
    }
    let caption_y = layout.row_y(spec.top_k);
    canvas.text(
        &format!("={}", percent(cumulative.min(1.0))),
        layout.pct_x(),
        caption_y,
    );
    Ok(canvas.finish())
}

/// Maps the normalized grid through the colormap, one pixel per cell.
pub fn render_heatmap(heatmap: &SpatialHeatmap, spec: &RenderSpec) -> ImageBuffer {
    let (w, h) = heatmap.size;
    ImageBuffer::from_fn(w, h, 3, |x, y, c| {
        spec.colormap.color(heatmap.normalized_at(x, y))[c] as f64 / 255.0
    })
}

/// Signed difference grid as grayscale: mid-gray is zero, white is the
/// largest positive difference, black the largest negative one.
pub fn render_difference(cmp: &HeatmapComparison) -> ImageBuffer {
    let (w, h) = cmp.size;
    let peak = cmp.difference.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    ImageBuffer::from_fn(w, h, 1, |x, y, _| {
        let d = cmp.difference[y * w + x];
        if peak > 0.0 {
            0.5 + 0.5 * d / peak
        } else {
            0.5
        }
    })
}

const SHEET_COLUMNS: usize = 6;

/// Average images in a grid, each labelled with its member count.
pub fn render_average_sheet(set: &AverageImageSet, spec: &RenderSpec) -> Result<ImageBuffer> {
    spec.validate()?;
    let (tw, th) = set.target_size;
    let (cw, ch) = (tw * spec.cell_scale, th * spec.cell_scale);
    let text_h = GLYPH_H * TEXT_SCALE;
    let cols = set.entries.len().clamp(1, SHEET_COLUMNS);
    let rows = set.entries.len().div_ceil(cols).max(1);
    let cell_w = cw.max(text_width("00000", TEXT_SCALE));
    let block_h = ch + PAD + text_h + PAD;
    let mut canvas = Canvas::new(PAD + cols * (cell_w + PAD), PAD + rows * block_h);
    for (i, e) in set.entries.iter().enumerate() {
        let x = PAD + (i % cols) * (cell_w + PAD);
        let y = PAD + (i / cols) * block_h;
        canvas.blit(&e.mean.upscale_nearest(spec.cell_scale), x, y);
        canvas.text(&e.n.to_string(), x, y + ch + PAD);
    }
    Ok(canvas.finish())
}
