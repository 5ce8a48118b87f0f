use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::image::{load_image, probe_image, LoadOptions};
use super::manifest::{DatasetManifest, SampleRecord};
use super::matrix::{DataMatrix, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchOptions {
    /// Patch `(height, width)`.
    pub patch: (usize, usize),
    pub count: usize,
    pub seed: u64,
    pub split: Option<String>,
    pub force_rgb: bool,
}

impl PatchOptions {
    pub fn new(height: usize, width: usize, count: usize, seed: u64) -> Self {
        Self {
            patch: (height, width),
            count,
            seed,
            split: None,
            force_rgb: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchSample {
    pub matrix: DataMatrix,
    /// Images skipped because they are smaller than the patch.
    pub skipped_images: usize,
}

// images decoded per parallel batch; bounds peak memory
const DECODE_BATCH: usize = 64;

/// Draws `count` patches: an image uniformly among those large enough, then a
/// top-left corner uniformly among all valid positions. Row `i` is the `i`-th
/// draw, so the output depends only on the manifest and the seed.
pub fn sample_patches(manifest: &DatasetManifest, opts: &PatchOptions) -> Result<PatchSample> {
    let (ph, pw) = opts.patch;
    if ph == 0 || pw == 0 {
        return Err(Error::invalid("patch size must be at least 1x1"));
    }
    if opts.count == 0 {
        return Err(Error::invalid("patch count must be at least 1"));
    }
    let records: Vec<&SampleRecord> = manifest.select(opts.split.as_deref()).collect();
    let headers: Vec<(usize, usize, usize)> = records
        .par_iter()
        .map(|r| {
            let path = manifest.resolve(&r.image);
            probe_image(&path).map_err(|message| Error::Decode {
                id: r.id.clone(),
                path,
                message,
            })
        })
        .collect::<Result<_>>()?;

    let eligible: Vec<usize> = (0..records.len())
        .filter(|&i| headers[i].0 >= pw && headers[i].1 >= ph)
        .collect();
    let skipped = records.len() - eligible.len();
    if eligible.is_empty() {
        return Err(Error::EmptySelection(Some(format!(
            "no image is at least {pw}x{ph}"
        ))));
    }
    if skipped > 0 {
        log::warn!("{skipped} images smaller than the {pw}x{ph} patch were skipped");
    }

    let channels = if opts.force_rgb {
        3
    } else {
        let expected = headers[eligible[0]].2;
        if let Some(&i) = eligible.iter().find(|&&i| headers[i].2 != expected) {
            return Err(Error::ChannelMismatch {
                id: records[i].id.clone(),
                expected,
                found: headers[i].2,
            });
        }
        expected
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    // per eligible image: (row, x, y) of every patch drawn from it
    let mut draws: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); eligible.len()];
    for row in 0..opts.count {
        let slot = rng.random_range(0..eligible.len());
        let (w, h, _) = headers[eligible[slot]];
        let x = rng.random_range(0..=w - pw);
        let y = rng.random_range(0..=h - ph);
        draws[slot].push((row, x, y));
    }

    let shape = Shape::new(ph, pw, channels);
    let p = shape.len();
    let mut data = vec![0.0; opts.count * p];
    let load = LoadOptions {
        force_rgb: opts.force_rgb,
        ..LoadOptions::default()
    };
    let used: Vec<usize> = (0..eligible.len())
        .filter(|&s| !draws[s].is_empty())
        .collect();
    for batch in used.chunks(DECODE_BATCH) {
        let extracted: Vec<Result<Vec<(usize, Vec<f64>)>>> = batch
            .par_iter()
            .map(|&slot| {
                let rec = records[eligible[slot]];
                let img = load_image(rec, manifest.root(), &load)?;
                Ok(draws[slot]
                    .iter()
                    .map(|&(row, x0, y0)| {
                        let mut patch = Vec::with_capacity(p);
                        for y in y0..y0 + ph {
                            let start = (y * img.width() + x0) * channels;
                            patch.extend_from_slice(&img.pixels()[start..start + pw * channels]);
                        }
                        (row, patch)
                    })
                    .collect())
            })
            .collect();
        for result in extracted {
            for (row, patch) in result? {
                data[row * p..(row + 1) * p].copy_from_slice(&patch);
            }
        }
    }

    Ok(PatchSample {
        matrix: DataMatrix::new(shape, data, None)?,
        skipped_images: skipped,
    })
}
