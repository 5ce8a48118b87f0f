//! Dataset manifests, image decoding and preprocessing, and assembly of
//! flattened data matrices from whole images or random patches.

mod image;
mod manifest;
mod matrix;
mod patches;

pub use self::image::{decode_image, load_image, probe_image, ImageBuffer, LoadOptions};
pub use self::manifest::{load_manifest, BoundingBox, DatasetManifest, SampleRecord};
pub use self::matrix::{build_data_matrix, unflatten, DataMatrix, Shape};
pub use self::patches::{sample_patches, PatchOptions, PatchSample};
