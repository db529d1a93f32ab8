//! Scene and component classifier training, inference and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod infer;
pub mod train;

pub use checkpoint::{ModelCheckpoint, Provenance, FORMAT_VERSION};
pub use config::{ArchChoice, Schedule, TrainConfig, COMPONENT_SCHEDULE, SCENE_SCHEDULE};
pub use evaluate::{bridge_free, evaluate_confusion, evaluate_false_positives};
pub use infer::{
    argmax_labels, infer, model_input, normalize_input, scene_probabilities, stack_scene_channels, InferMode,
    Prediction, STACKED_CHANNELS,
};
pub use train::{
    train_component, train_scene, BatchRecord, ComponentMode, NoObserver, RecordingObserver, SceneBlocks,
    TrainObserver,
};
