use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points per frame in the standard fiducial scheme.
pub const NUM_LANDMARKS: usize = 68;

/// Source-image pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Per-frame landmark sets; point `j` of every frame is the same facial location.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkTrack {
    pub video_id: String,
    frames: Vec<Vec<Point>>,
}

#[derive(Serialize, Deserialize)]
struct LandmarkFile {
    video_id: String,
    frames: Vec<Vec<[f64; 2]>>,
}

impl LandmarkTrack {
    pub fn new(video_id: impl Into<String>, frames: Vec<Vec<Point>>) -> Result<Self> {
        let video_id = video_id.into();
        check_frames(&frames).map_err(|message| Error::Video {
            video_id: video_id.clone(),
            message,
        })?;
        Ok(LandmarkTrack { video_id, frames })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, t: usize) -> &[Point] {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Vec<Point>] {
        &self.frames
    }

    /// `(frame, landmark)` pairs lying outside a `width x height` image.
    /// These are kept; pooling clips its regions into the map.
    pub fn overshoot(&self, width: f64, height: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (t, frame) in self.frames.iter().enumerate() {
            for (j, p) in frame.iter().enumerate() {
                if p.x < 0.0 || p.y < 0.0 || p.x > width || p.y > height {
                    out.push((t, j));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let file = LandmarkFile {
            video_id: self.video_id.clone(),
            frames: self
                .frames
                .iter()
                .map(|f| f.iter().map(|p| [p.x, p.y]).collect())
                .collect(),
        };
        serde_json::to_string(&file).expect("landmarks serialize")
    }
}

fn check_frames(frames: &[Vec<Point>]) -> std::result::Result<(), String> {
    if frames.is_empty() {
        return Err("landmark track has no frames".into());
    }
    for (t, frame) in frames.iter().enumerate() {
        if frame.len() != NUM_LANDMARKS {
            return Err(format!(
                "frame {t} has {} points, expected {NUM_LANDMARKS}",
                frame.len()
            ));
        }
        if let Some(j) = frame.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(format!("frame {t} point {j} is not finite"));
        }
    }
    Ok(())
}

/// Parse a landmark JSON document: `{"video_id": .., "frames": [[[x, y] x 68], ..]}`.
pub fn parse_landmarks(text: &str, origin: &Path, expected_frames: Option<usize>) -> Result<LandmarkTrack> {
    let file: LandmarkFile = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
    let frames: Vec<Vec<Point>> = file
        .frames
        .into_iter()
        .map(|f| f.into_iter().map(|[x, y]| Point::new(x, y)).collect())
        .collect();
    let err = |message: String| Error::Landmarks {
        path: origin.to_path_buf(),
        message,
    };
    check_frames(&frames).map_err(err)?;
    if let Some(n) = expected_frames {
        if frames.len() != n {
            return Err(err(format!("{} frames, expected {n}", frames.len())));
        }
    }
    Ok(LandmarkTrack {
        video_id: file.video_id,
        frames,
    })
}

pub fn read_landmarks(path: impl AsRef<Path>, expected_frames: Option<usize>) -> Result<LandmarkTrack> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text, path, expected_frames)
}
