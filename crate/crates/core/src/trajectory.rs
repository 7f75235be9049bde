//! Landmark trajectories and temporal windowing.

use serde::{Deserialize, Serialize};

use crate::data::{LandmarkTrack, NUM_LANDMARKS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub x: f64,
    pub y: f64,
    pub frame: usize,
}

/// One landmark followed across consecutive frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub landmark_index: usize,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn slice(&self, start: usize, len: usize) -> Trajectory {
        Trajectory {
            landmark_index: self.landmark_index,
            points: self.points[start..start + len].to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Even window length in frames.
    pub length: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            length: 16,
            stride: 1,
        }
    }
}

impl WindowSpec {
    pub fn new(length: usize, stride: usize) -> Result<Self> {
        if length < 2 || length % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "window length must be even and >= 2, got {length}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidInput("window stride must be >= 1".into()));
        }
        Ok(WindowSpec { length, stride })
    }

    /// Centres `c` with `length/2 <= c <= n - length/2 - 1`, stepping by `stride`.
    pub fn centers(&self, frames: usize) -> Vec<usize> {
        let half = self.length / 2;
        if frames <= self.length {
            return Vec::new();
        }
        (half..=frames - half - 1).step_by(self.stride).collect()
    }
}

/// Trajectories restricted to one frame range.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBundle {
    /// Index into the window list; `None` for a whole-sequence bundle.
    pub window_index: Option<usize>,
    pub center_frame: Option<usize>,
    pub start_frame: usize,
    pub frame_count: usize,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryBundle {
    pub fn frame_range(&self) -> std::ops::Range<usize> {
        self.start_frame..self.start_frame + self.frame_count
    }
}

/// Transpose a landmark track into one trajectory per landmark.
pub fn build_trajectories(track: &LandmarkTrack) -> Vec<Trajectory> {
    (0..NUM_LANDMARKS)
        .map(|j| Trajectory {
            landmark_index: j,
            points: track
                .frames()
                .iter()
                .enumerate()
                .map(|(t, frame)| TrajectoryPoint {
                    x: frame[j].x,
                    y: frame[j].y,
                    frame: t,
                })
                .collect(),
        })
        .collect()
}

/// Symmetric windows around every valid centre frame. Sequences no longer
/// than the window produce no bundles.
pub fn split_windows(trajectories: &[Trajectory], spec: WindowSpec) -> Vec<TrajectoryBundle> {
    let frames = trajectories.first().map_or(0, Trajectory::len);
    let centers = spec.centers(frames);
    if centers.is_empty() {
        log::warn!(
            "sequence of {frames} frames is not longer than the {}-frame window; no windows",
            spec.length
        );
    }
    let half = spec.length / 2;
    centers
        .into_iter()
        .enumerate()
        .map(|(w, c)| {
            let start = c - half;
            TrajectoryBundle {
                window_index: Some(w),
                center_frame: Some(c),
                start_frame: start,
                frame_count: spec.length,
                trajectories: trajectories.iter().map(|t| t.slice(start, spec.length)).collect(),
            }
        })
        .collect()
}

pub fn whole_sequence_bundle(trajectories: &[Trajectory]) -> TrajectoryBundle {
    let frames = trajectories.first().map_or(0, Trajectory::len);
    TrajectoryBundle {
        window_index: None,
        center_frame: None,
        start_frame: trajectories
            .first()
            .and_then(|t| t.points.first())
            .map_or(0, |p| p.frame),
        frame_count: frames,
        trajectories: trajectories.to_vec(),
    }
}
