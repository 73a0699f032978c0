//! Sample manifests, pixel preprocessing and the synthetic live/spoof generator.

mod manifest;
mod preprocess;
pub mod synth;

pub use manifest::{
    load_manifest, parse_manifest, write_manifest, Label, SampleRecord, MANIFEST_HEADER,
};
pub use preprocess::{
    deprocess_pixel, image_to_tensor, load_image, load_samples, preprocess_pixel, tensor_to_image,
};

use crate::tensor::Tensor;

/// A preprocessed image `(1, h, w, 3)` with its label.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor,
    pub spoof: bool,
}
