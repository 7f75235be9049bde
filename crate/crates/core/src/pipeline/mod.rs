//! Config-driven pipeline: pool, fit, encode, train and evaluate.

mod commands;
mod config;
mod stages;
mod store;

pub use commands::{cmd_encode, cmd_evaluate, cmd_fit, cmd_pool, cmd_train, config_hash, Pipeline, StageSummary, VERSION};
pub use config::{GmmSection, RunConfig, SvmSection, WindowConfig, WindowMode};
pub use stages::{
    encode_video, fit_vocabulary, pool_video, resolve_windows, sample_labels, train_classifier, LabeledVideo,
    Sample, TrainingSet, VideoDescriptors, Vocabulary,
};
pub use store::{descriptor_path, encoding_path, file_stem, load_descriptors, load_encodings, VideoEncodings};
