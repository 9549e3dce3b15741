//! Image preprocessing: center crop, bilinear resize, flips and color
//! jitter, plus a synthetic lesion-image generator for desk-scale runs.

mod augment;
mod image;
mod source;
mod synth;

use thiserror::Error;

pub use augment::{augment, AugmentConfig};
pub use image::{center_crop, prepare, resize, to_features, RawImage};
pub use source::ImageSource;
pub use synth::{largest_remainder, synth_dataset, SyntheticSample, ISIC_PROPORTIONS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("resize needs a square image, got {width}x{height}")]
    NotSquare { width: u32, height: u32 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("png: {0}")]
    Png(String),
}
