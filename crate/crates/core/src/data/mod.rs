//! Samples, label remapping, data blocks, mini-batch planning, augmentation,
//! synthetic scenes and manifest I/O.

pub mod augment;
pub mod batch;
pub mod blocks;
pub mod image;
pub mod manifest;
pub mod remap;
pub mod sample;
pub mod synth;

pub use augment::{augment, AugmentPolicy, GeometricTransform, CROP_SIZE};
pub use batch::{compose_minibatch, composition, BatchPlanner, SampleRef, COMPONENT_BATCH, SCENE_COMPOSITION};
pub use blocks::{make_blocks, DataBlock, MAX_BLOCK};
pub use image::{LabelMap, RgbImage};
pub use manifest::{load_dataset, read_manifest, write_manifest, ManifestRecord};
pub use remap::{remap_labels, LabelMapping, Legend, RemapTable};
pub use sample::{resize_longer_side, Category, Sample, Split, TARGET_LONGER_SIDE};
pub use synth::{generate_corpus, generate_synthetic_scene};
