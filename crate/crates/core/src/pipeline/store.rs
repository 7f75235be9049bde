//! On-disk layout of an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::stages::{Sample, VideoDescriptors};
use crate::data::NUM_LANDMARKS;
use crate::error::{Error, Result};
use crate::tensor::{read_tensor_file, write_tensor_file, Tensor};

/// File-name stem for a video id: unsafe characters become `_`, and a hash
/// suffix keeps rewritten ids distinct.
pub fn file_stem(video_id: &str) -> String {
    let clean: String = video_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    if clean == video_id && !clean.starts_with('.') {
        clean
    } else {
        use sha2::{Digest, Sha256};
        let h = hex::encode(&Sha256::digest(video_id.as_bytes())[..4]);
        format!("{clean}-{h}")
    }
}

pub fn descriptor_path(out: &Path, video_id: &str) -> PathBuf {
    out.join("descriptors").join(format!("{}.tpfv", file_stem(video_id)))
}

pub fn encoding_path(out: &Path, video_id: &str) -> PathBuf {
    out.join("fv").join(format!("{}.tpfv", file_stem(video_id)))
}

#[derive(Serialize, Deserialize)]
struct WindowMeta {
    window_index: Option<usize>,
    center_frame: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct FileMeta {
    kind: String,
    video_id: String,
    windows: Vec<WindowMeta>,
}

fn meta_of(kind: &str, video_id: &str, samples: impl Iterator<Item = (Option<usize>, Option<usize>)>) -> serde_json::Value {
    json!({
        "kind": kind,
        "video_id": video_id,
        "windows": samples
            .map(|(w, c)| WindowMeta { window_index: w, center_frame: c })
            .collect::<Vec<_>>(),
    })
}

fn read_meta(t: &Tensor, kind: &str, path: &Path) -> Result<FileMeta> {
    let meta: FileMeta = t
        .header
        .metadata
        .clone()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| Error::json(path, e))?
        .ok_or_else(|| Error::format(path, 12, "missing metadata"))?;
    if meta.kind != kind {
        return Err(Error::format(path, 12, format!("expected a {kind} file, found {}", meta.kind)));
    }
    if t.shape().first() != Some(&meta.windows.len()) || t.shape().len() != 3 {
        return Err(Error::format(path, 12, "payload shape does not match the window list"));
    }
    Ok(meta)
}

/// `[samples, landmarks, channels]`, f64.
pub fn save_descriptors(path: &Path, v: &VideoDescriptors) -> Result<()> {
    let data: Vec<f64> = v.samples.iter().flat_map(|s| s.rows.iter().flatten().copied()).collect();
    let mut t = Tensor::from_f64(vec![v.samples.len(), NUM_LANDMARKS, v.channels], data)?;
    t.header.metadata = Some(meta_of(
        "descriptors",
        &v.video_id,
        v.samples.iter().map(|s| (s.window_index, s.center_frame)),
    ));
    write_tensor_file(path, &t)
}

pub fn load_descriptors(path: &Path) -> Result<VideoDescriptors> {
    let t = read_tensor_file(path)?;
    let meta = read_meta(&t, "descriptors", path)?;
    let (landmarks, channels) = (t.shape()[1], t.shape()[2]);
    if landmarks != NUM_LANDMARKS {
        return Err(Error::format(path, 12, format!("expected {NUM_LANDMARKS} landmarks, found {landmarks}")));
    }
    let values = t.to_f64_vec();
    let per_sample = landmarks * channels;
    let samples = meta
        .windows
        .into_iter()
        .enumerate()
        .map(|(i, w)| Sample {
            window_index: w.window_index,
            center_frame: w.center_frame,
            rows: values[i * per_sample..(i + 1) * per_sample]
                .chunks(channels.max(1))
                .map(<[f64]>::to_vec)
                .collect(),
        })
        .collect();
    Ok(VideoDescriptors {
        video_id: meta.video_id,
        channels,
        samples,
    })
}

/// Per-sample, per-unit encodings of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoEncodings {
    pub video_id: String,
    pub windows: Vec<(Option<usize>, Option<usize>)>,
    /// `[sample][unit][coordinate]`.
    pub values: Vec<Vec<Vec<f64>>>,
}

/// `[samples, units, length]`, f64.
pub fn save_encodings(path: &Path, e: &VideoEncodings, units: usize, length: usize) -> Result<()> {
    let data: Vec<f64> = e.values.iter().flatten().flatten().copied().collect();
    let mut t = Tensor::from_f64(vec![e.values.len(), units, length], data)?;
    t.header.metadata = Some(meta_of("fv", &e.video_id, e.windows.iter().copied()));
    write_tensor_file(path, &t)
}

pub fn load_encodings(path: &Path) -> Result<VideoEncodings> {
    let t = read_tensor_file(path)?;
    let meta = read_meta(&t, "fv", path)?;
    let (units, length) = (t.shape()[1], t.shape()[2]);
    let values = t.to_f64_vec();
    let rows: Vec<Vec<f64>> = values.chunks(length.max(1)).map(<[f64]>::to_vec).collect();
    Ok(VideoEncodings {
        video_id: meta.video_id,
        windows: meta.windows.iter().map(|w| (w.window_index, w.center_frame)).collect(),
        values: rows.chunks(units.max(1)).map(<[Vec<f64>]>::to_vec).collect(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
