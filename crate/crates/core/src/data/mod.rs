//! Pipeline data types and their on-disk formats.

mod features;
mod landmarks;
mod manifest;

pub use features::{read_feature_sequence, FeatureMapSequence};
pub use landmarks::{parse_landmarks, read_landmarks, LandmarkTrack, Point, NUM_LANDMARKS};
pub use manifest::{
    read_frame_labels, read_manifest, validate_manifest, validate_manifest_files, DatasetManifest,
    Label, ManifestEntry, Task, Violation, ViolationKind,
};
