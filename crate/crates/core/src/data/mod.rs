//! Image decoding, preprocessing, augmentation, folds and batching.

pub mod augment;
mod dataset;
pub mod folds;
pub mod image;
pub mod manifest;
pub mod packed;
pub mod preprocess;
pub mod synthetic;

pub use augment::{adjust_contrast, augment, rotate, zoom, AugmentConfig, AugmentDraw};
pub use dataset::{Dataset, EpochAugment};
pub use folds::{fold_complement, fold_members, kfold_assign, make_batches, sequential_batches};
pub use image::{decode_image, encode_netpbm, ImageFormat, RawImage};
pub use manifest::{
    class_counts, DatasetManifest, ManifestEntry, ManifestMeta, Split, NUM_CLASSES,
};
pub use packed::PackedDataset;
pub use preprocess::{is_prepared, prepare, preprocess, to_unit, Normalization};
