use std::path::Path;

use image::{DynamicImage, ImageReader};

use super::manifest::{BoundingBox, SampleRecord};
use crate::error::{Error, Result};

/// A decoded image with values in `[0, 1]`, stored row-major in
/// `(y, x, c)` order with 1 or 3 interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: width * height * channels,
                found: pixels.len(),
            });
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(x, y, c)`; results are clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(width > 0 && height > 0 && (channels == 1 || channels == 3));
        let mut pixels = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self::from_fn(width, height, channels, |_, _, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    pub(crate) fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.pixels[i..i + self.channels]
    }

    /// Replicates a single channel into three; 3-channel images are returned unchanged.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels,
        }
    }

    pub fn crop(&self, bbox: BoundingBox) -> Result<ImageBuffer> {
        if !bbox.fits(self.width, self.height) {
            return Err(Error::invalid(format!(
                "bbox {:?} exceeds image bounds {}x{}",
                bbox, self.width, self.height
            )));
        }
        let (x0, y0) = (bbox.x as usize, bbox.y as usize);
        let (w, h) = (bbox.w as usize, bbox.h as usize);
        let c = self.channels;
        let mut pixels = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            pixels.extend_from_slice(&self.pixels[start..start + w * c]);
        }
        Ok(ImageBuffer {
            width: w,
            height: h,
            channels: c,
            pixels,
        })
    }

    /// Resamples to `width x height`. Each axis is filtered independently:
    /// area averaging when it shrinks, bilinear interpolation (pixel centres
    /// aligned) when it grows.
    pub fn resize(&self, width: usize, height: usize) -> ImageBuffer {
        assert!(width > 0 && height > 0);
        if width == self.width && height == self.height {
            return self.clone();
        }
        let c = self.channels;
        let wx = axis_weights(self.width, width);
        let wy = axis_weights(self.height, height);

        // horizontal pass: height x width_out
        let mut tmp = vec![0.0; self.height * width * c];
        for y in 0..self.height {
            let src = &self.pixels[y * self.width * c..(y + 1) * self.width * c];
            let dst = &mut tmp[y * width * c..(y + 1) * width * c];
            for (ox, taps) in wx.iter().enumerate() {
                for ch in 0..c {
                    dst[ox * c + ch] = taps.iter().map(|&(i, w)| w * src[i * c + ch]).sum();
                }
            }
        }
        // vertical pass
        let row = width * c;
        let mut pixels = vec![0.0; height * row];
        for (oy, taps) in wy.iter().enumerate() {
            let dst = &mut pixels[oy * row..(oy + 1) * row];
            for &(i, w) in taps {
                let src = &tmp[i * row..(i + 1) * row];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
            for d in dst.iter_mut() {
                *d = d.clamp(0.0, 1.0);
            }
        }
        ImageBuffer {
            width,
            height,
            channels: c,
            pixels,
        }
    }

    /// Nearest-neighbour upscaling by an integer factor.
    pub fn upscale_nearest(&self, factor: usize) -> ImageBuffer {
        assert!(factor >= 1);
        if factor == 1 {
            return self.clone();
        }
        ImageBuffer::from_fn(
            self.width * factor,
            self.height * factor,
            self.channels,
            |x, y, c| self.get(x / factor, y / factor, c),
        )
    }

    /// Quantizes to 8 bits (`round(v * 255)`).
    pub fn to_dynamic(&self) -> DynamicImage {
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| quantize(v)).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("sized"))
        } else {
            DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("sized"))
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_dynamic()
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Encode {
                path: "<memory>".into(),
                message: e.to_string(),
            })?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-output-index filter taps `(source index, weight)` for one axis.
fn axis_weights(len_in: usize, len_out: usize) -> Vec<Vec<(usize, f64)>> {
    if len_out == len_in {
        return (0..len_in).map(|i| vec![(i, 1.0)]).collect();
    }
    if len_out < len_in {
        // Exact box overlap on the integer lattice where a source pixel has
        // length `len_out` and an output pixel has length `len_in`.
        (0..len_out)
            .map(|o| {
                let lo = o * len_in;
                let hi = lo + len_in;
                let first = lo / len_out;
                let last = (hi - 1) / len_out;
                (first..=last)
                    .map(|i| {
                        let s_lo = i * len_out;
                        let s_hi = s_lo + len_out;
                        let overlap = s_hi.min(hi) - s_lo.max(lo);
                        (i, overlap as f64 / len_in as f64)
                    })
                    .filter(|&(_, w)| w > 0.0)
                    .collect()
            })
            .collect()
    } else {
        let scale = len_in as f64 / len_out as f64;
        (0..len_out)
            .map(|o| {
                let x = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len_in - 1) as f64);
                let i0 = x.floor() as usize;
                let i1 = (i0 + 1).min(len_in - 1);
                let t = x - i0 as f64;
                if i1 == i0 || t == 0.0 {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - t), (i1, t)]
                }
            })
            .collect()
    }
}

/// Decodes a PNG or JPEG file. Alpha is dropped; 8-bit data is scaled by
/// `1/255`, 16-bit data by `1/65535`.
pub fn decode_image(path: &Path) -> std::result::Result<ImageBuffer, String> {
    let img = ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map_err(|e| e.to_string())?;
    Ok(from_dynamic(&img))
}

pub(crate) fn from_dynamic(img: &DynamicImage) -> ImageBuffer {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let color = img.color();
    let channels = if color.has_color() { 3 } else { 1 };
    let pixels: Vec<f64> = match (color.bytes_per_pixel() / color.channel_count(), channels) {
        (1, 1) => img
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
        (1, _) => img
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
        (2, 1) => img
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        (2, _) => img
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        (_, 1) => img
            .to_luma32f()
            .into_raw()
            .into_iter()
            .map(|v| (v as f64).clamp(0.0, 1.0))
            .collect(),
        _ => img
            .to_rgb32f()
            .into_raw()
            .into_iter()
            .map(|v| (v as f64).clamp(0.0, 1.0))
            .collect(),
    };
    ImageBuffer {
        width: w,
        height: h,
        channels,
        pixels,
    }
}

/// Width, height and channel count (after alpha removal) from the file header.
pub fn probe_image(path: &Path) -> std::result::Result<(usize, usize, usize), String> {
    use image::ImageDecoder;
    let decoder = ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .into_decoder()
        .map_err(|e| e.to_string())?;
    let (w, h) = decoder.dimensions();
    let channels = if decoder.color_type().has_color() {
        3
    } else {
        1
    };
    Ok((w as usize, h as usize, channels))
}

/// Preprocessing applied by [`load_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    pub crop_to_bbox: bool,
    /// Output `(width, height)`.
    pub target_size: Option<(usize, usize)>,
    pub force_rgb: bool,
}

impl LoadOptions {
    pub fn sized(width: usize, height: usize) -> Self {
        Self {
            target_size: Some((width, height)),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.target_size {
            Some((w, h)) if w == 0 || h == 0 => {
                Err(Error::invalid("target size components must be at least 1"))
            }
            _ => Ok(()),
        }
    }
}

/// Decodes a sample's image and applies crop, resize and channel expansion in
/// that order.
pub fn load_image(record: &SampleRecord, root: &Path, opts: &LoadOptions) -> Result<ImageBuffer> {
    opts.validate()?;
    let path = root.join(&record.image);
    let mut img = decode_image(&path).map_err(|message| Error::Decode {
        id: record.id.clone(),
        path: path.clone(),
        message,
    })?;
    if opts.crop_to_bbox {
        match record.bbox {
            Some(bbox) => {
                img = img.crop(bbox).map_err(|e| Error::InvalidRecord {
                    id: record.id.clone(),
                    message: e.to_string(),
                })?
            }
            None => log::warn!(
                "sample {:?}: crop requested but no bbox, using the full image",
                record.id
            ),
        }
    } else if let Some(bbox) = record.bbox {
        if !bbox.fits(img.width(), img.height()) {
            return Err(Error::InvalidRecord {
                id: record.id.clone(),
                message: format!(
                    "bbox {:?} exceeds image bounds {}x{}",
                    bbox,
                    img.width(),
                    img.height()
                ),
            });
        }
    }
    if let Some((w, h)) = opts.target_size {
        img = img.resize(w, h);
    }
    if opts.force_rgb {
        img = img.to_rgb();
    }
    Ok(img)
}
