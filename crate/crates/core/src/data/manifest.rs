use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_feature_sequence, read_landmarks};
use crate::error::{Error, Result};

/// Categorical class id or a fixed-width action-unit bitset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Categorical(usize),
    MultiLabel(Vec<bool>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Categorical,
    Multilabel,
}

/// One manifest line. Missing string fields deserialize as empty and are
/// reported by [`validate_manifest`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default)]
    pub video_id: String,
    #[serde(default)]
    pub actor_id: String,
    pub label: Label,
    #[serde(default)]
    pub feature_path: String,
    #[serde(default)]
    pub landmark_path: String,
    /// Per-frame action-unit bitsets (JSON array of arrays of bools).
    /// Without it the video-level label applies to every window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_labels_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub num_classes: usize,
    pub task: Task,
    /// Directory that relative entry paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Infers the task and class count from the labels.
    pub fn from_entries(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Self {
        let task = match entries.first().map(|e| &e.label) {
            Some(Label::MultiLabel(_)) => Task::Multilabel,
            _ => Task::Categorical,
        };
        let num_classes = entries
            .iter()
            .map(|e| match &e.label {
                Label::Categorical(c) => c + 1,
                Label::MultiLabel(bits) => bits.len(),
            })
            .max()
            .unwrap_or(0);
        DatasetManifest {
            entries,
            num_classes,
            task,
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Distinct actor ids in sorted order.
    pub fn actors(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.actor_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn entry(&self, video_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Append another manifest's entries, re-resolving their paths to absolute.
    pub fn concat(&mut self, other: &DatasetManifest) {
        for e in &other.entries {
            let mut e = e.clone();
            e.feature_path = other.resolve(&e.feature_path).to_string_lossy().into_owned();
            e.landmark_path = other.resolve(&e.landmark_path).to_string_lossy().into_owned();
            e.frame_labels_path = e
                .frame_labels_path
                .map(|p| other.resolve(&p).to_string_lossy().into_owned());
            self.entries.push(e);
        }
        self.num_classes = self.num_classes.max(other.num_classes);
    }
}

/// Read a JSON-lines manifest. Blank lines are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        entries.push(serde_json::from_str(line).map_err(|e| Error::json(path, e))?);
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(DatasetManifest::from_entries(entries, base))
}

pub fn read_frame_labels(path: impl AsRef<Path>) -> Result<Vec<Vec<bool>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateVideoId,
    EmptyVideoId,
    EmptyActorId,
    EmptyFeaturePath,
    EmptyLandmarkPath,
    LabelOutOfRange,
    MixedTask,
    BitsetWidth,
    FrameCountMismatch,
    Unreadable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub entry: usize,
    pub video_id: String,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "entry {} ({}): {}", self.entry, self.video_id, self.message)
    }
}

/// Structural checks; one violation per defect, empty when the manifest is valid.
pub fn validate_manifest(manifest: &DatasetManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        let mut push = |kind, message: &str| {
            out.push(Violation {
                entry: i,
                video_id: e.video_id.clone(),
                kind,
                message: message.to_string(),
            })
        };
        if e.video_id.is_empty() {
            push(ViolationKind::EmptyVideoId, "empty video_id");
        } else if !seen.insert(e.video_id.as_str()) {
            push(ViolationKind::DuplicateVideoId, "duplicate video_id");
        }
        if e.actor_id.is_empty() {
            push(ViolationKind::EmptyActorId, "empty actor_id");
        }
        if e.feature_path.is_empty() {
            push(ViolationKind::EmptyFeaturePath, "missing feature_path");
        }
        if e.landmark_path.is_empty() {
            push(ViolationKind::EmptyLandmarkPath, "missing landmark_path");
        }
        match (&e.label, manifest.task) {
            (Label::Categorical(c), Task::Categorical) if *c >= manifest.num_classes => {
                push(ViolationKind::LabelOutOfRange, "class id out of range")
            }
            (Label::MultiLabel(bits), Task::Multilabel) if bits.len() != manifest.num_classes => {
                push(ViolationKind::BitsetWidth, "label bitset width differs")
            }
            (Label::Categorical(_), Task::Multilabel) | (Label::MultiLabel(_), Task::Categorical) => {
                push(ViolationKind::MixedTask, "label kind differs from manifest task")
            }
            _ => {}
        }
    }
    out
}

/// [`validate_manifest`] plus loading every entry to check that feature and
/// landmark frame counts agree.
pub fn validate_manifest_files(manifest: &DatasetManifest) -> Vec<Violation> {
    let mut out = validate_manifest(manifest);
    for (i, e) in manifest.entries.iter().enumerate() {
        if e.feature_path.is_empty() || e.landmark_path.is_empty() {
            continue;
        }
        let violation = |kind, message: String| Violation {
            entry: i,
            video_id: e.video_id.clone(),
            kind,
            message,
        };
        let features = match read_feature_sequence(manifest.resolve(&e.feature_path), &e.video_id) {
            Ok(f) => f,
            Err(err) => {
                out.push(violation(ViolationKind::Unreadable, err.to_string()));
                continue;
            }
        };
        match read_landmarks(manifest.resolve(&e.landmark_path), None) {
            Ok(track) if track.frame_count() != features.frame_count() => out.push(violation(
                ViolationKind::FrameCountMismatch,
                format!(
                    "{} feature frames but {} landmark frames",
                    features.frame_count(),
                    track.frame_count()
                ),
            )),
            Ok(_) => {}
            Err(err) => out.push(violation(ViolationKind::Unreadable, err.to_string())),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(video: &str, actor: &str, class: usize) -> ManifestEntry {
        ManifestEntry {
            video_id: video.into(),
            actor_id: actor.into(),
            label: Label::Categorical(class),
            feature_path: format!("{video}.tpfv"),
            landmark_path: format!("{video}.json"),
            frame_labels_path: None,
        }
    }

    #[test]
    fn valid_54_actor_manifest_has_no_violations() {
        let entries = (0..54)
            .flat_map(|a| (0..2).map(move |k| entry(&format!("a{a}_v{k}"), &format!("a{a}"), k)))
            .collect();
        let m = DatasetManifest::from_entries(entries, ".");
        assert_eq!(m.actors().len(), 54);
        assert!(validate_manifest(&m).is_empty());
    }

    #[test]
    fn duplicate_video_id_is_one_violation() {
        let m = DatasetManifest::from_entries(vec![entry("v", "a", 0), entry("v", "b", 1)], ".");
        let v = validate_manifest(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::DuplicateVideoId);
        assert_eq!(v[0].message, "duplicate video_id");
    }

    #[test]
    fn missing_landmark_path_parses_and_is_flagged() {
        let line = r#"{"video_id":"v","actor_id":"a","label":0,"feature_path":"v.tpfv"}"#;
        let e: ManifestEntry = serde_json::from_str(line).unwrap();
        let m = DatasetManifest::from_entries(vec![e], ".");
        let v = validate_manifest(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::EmptyLandmarkPath);
    }

    #[test]
    fn multilabel_labels_parse_as_bitsets() {
        let line = r#"{"video_id":"v","actor_id":"a","label":[true,false,true],"feature_path":"f","landmark_path":"l"}"#;
        let e: ManifestEntry = serde_json::from_str(line).unwrap();
        let m = DatasetManifest::from_entries(vec![e], ".");
        assert_eq!(m.task, Task::Multilabel);
        assert_eq!(m.num_classes, 3);
        assert!(validate_manifest(&m).is_empty());
    }

    #[test]
    fn mixed_label_kinds_are_flagged() {
        let mut e = entry("w", "a", 0);
        e.label = Label::MultiLabel(vec![true]);
        let m = DatasetManifest::from_entries(vec![entry("v", "a", 0), e], ".");
        let v = validate_manifest(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::MixedTask);
    }

    #[test]
    fn jsonl_round_trip() {
        let m = DatasetManifest::from_entries(vec![entry("v", "a", 0), entry("w", "b", 1)], "");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, m.to_jsonl()).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.entries, m.entries);
        assert_eq!(back.num_classes, 2);
        assert_eq!(back.resolve("v.tpfv"), dir.path().join("v.tpfv"));
    }
}
