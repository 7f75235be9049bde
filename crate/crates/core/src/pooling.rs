//! Trajectory-pooled features: backbone activations averaged over a scaled
//! region that follows each landmark through a bundle's frames.

use serde::{Deserialize, Serialize};

use crate::data::FeatureMapSequence;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::trajectory::TrajectoryBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolingSpec {
    /// `(height, width)` of the pooling region in source-image pixels.
    pub region: (usize, usize),
    #[serde(default)]
    pub spatial: Reduce,
    #[serde(default)]
    pub temporal: Reduce,
}

impl Default for PoolingSpec {
    fn default() -> Self {
        PoolingSpec {
            region: (64, 64),
            spatial: Reduce::Mean,
            temporal: Reduce::Mean,
        }
    }
}

/// Half-open cell box `[row0, row1) x [col0, col1)` in feature-map coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellBox {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl CellBox {
    pub fn height(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn width(&self) -> usize {
        self.col1 - self.col0
    }
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// One axis of [`scale_region`]: extent rounded half-up with floor 1, clipped into `[0, map)`.
fn scale_axis(center: f64, region: usize, source: usize, map: usize) -> (usize, usize) {
    let ratio = map as f64 / source as f64;
    let extent = round_half_up(region as f64 * ratio).max(1);
    let start = round_half_up(center * ratio - extent as f64 / 2.0);
    let end = start + extent;
    let map = map as i64;
    let (mut lo, mut hi) = (start.clamp(0, map), end.clamp(0, map));
    if lo == hi {
        // entirely outside the map: keep the nearest edge cell
        if lo == 0 {
            hi = 1;
        } else {
            lo = map - 1;
        }
    }
    (lo as usize, hi as usize)
}

/// Map a source-image point and pooling region onto a never-empty cell box.
///
/// `x` runs along the width axis and `y` along the height axis.
pub fn scale_region(
    x: f64,
    y: f64,
    spec: &PoolingSpec,
    source_dims: (usize, usize),
    map_dims: (usize, usize),
) -> CellBox {
    let (row0, row1) = scale_axis(y, spec.region.0, source_dims.0, map_dims.0);
    let (col0, col1) = scale_axis(x, spec.region.1, source_dims.1, map_dims.1);
    CellBox {
        row0,
        row1,
        col0,
        col1,
    }
}

/// Pooled descriptor for one trajectory of one bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDescriptor<T> {
    pub values: Vec<T>,
    pub video_id: String,
    pub landmark_index: usize,
    pub window_index: Option<usize>,
}

fn pool_frame(
    features: &FeatureMapSequence,
    frame: usize,
    cells: CellBox,
    reduce: Reduce,
    out: &mut [f64],
) {
    let (h, w) = features.map_dims();
    let data = features.frame(frame);
    let area = (cells.height() * cells.width()) as f64;
    for (c, slot) in out.iter_mut().enumerate() {
        let plane = &data[c * h * w..(c + 1) * h * w];
        let mut acc = 0.0f64;
        for r in cells.row0..cells.row1 {
            acc += plane[r * w + cells.col0..r * w + cells.col1]
                .iter()
                .map(|&v| f64::from(v))
                .sum::<f64>();
        }
        *slot = match reduce {
            Reduce::Mean => acc / area,
            Reduce::Sum => acc,
        };
    }
}

/// Pool every trajectory in `bundle` over `features`.
pub fn pool_bundle<T: Real>(
    features: &FeatureMapSequence,
    bundle: &TrajectoryBundle,
    spec: &PoolingSpec,
) -> Result<Vec<TrajectoryDescriptor<T>>> {
    let range = bundle.frame_range();
    if range.end > features.frame_count() || bundle.frame_count == 0 {
        return Err(Error::Video {
            video_id: features.video_id.clone(),
            message: format!(
                "bundle frames {range:?} outside the {} available feature frames",
                features.frame_count()
            ),
        });
    }
    let channels = features.channels();
    let mut per_frame = vec![0.0f64; channels];
    bundle
        .trajectories
        .iter()
        .map(|traj| {
            let mut acc = vec![0.0f64; channels];
            for p in &traj.points {
                if !range.contains(&p.frame) {
                    return Err(Error::Video {
                        video_id: features.video_id.clone(),
                        message: format!(
                            "trajectory {} visits frame {} outside bundle {range:?}",
                            traj.landmark_index, p.frame
                        ),
                    });
                }
                let cells =
                    scale_region(p.x, p.y, spec, features.source_dims(), features.map_dims());
                pool_frame(features, p.frame, cells, spec.spatial, &mut per_frame);
                acc.iter_mut().zip(&per_frame).for_each(|(a, &v)| *a += v);
            }
            let scale = match spec.temporal {
                Reduce::Mean => 1.0 / traj.points.len().max(1) as f64,
                Reduce::Sum => 1.0,
            };
            Ok(TrajectoryDescriptor {
                values: acc.into_iter().map(|v| T::of(v * scale)).collect(),
                video_id: features.video_id.clone(),
                landmark_index: traj.landmark_index,
                window_index: bundle.window_index,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LandmarkTrack, Point, NUM_LANDMARKS};
    use crate::trajectory::{build_trajectories, split_windows, whole_sequence_bundle, WindowSpec};
    use proptest::prelude::*;

    const GEOM: (usize, usize) = (224, 224);

    #[test]
    fn centre_of_224_image_on_14_map() {
        let b = scale_region(112.0, 112.0, &PoolingSpec::default(), GEOM, (14, 14));
        assert_eq!((b.row0, b.row1, b.col0, b.col1), (5, 9, 5, 9));
        assert_eq!((b.row0 + b.row1) as f64 / 2.0, 7.0);
    }

    #[test]
    fn origin_clips_to_top_left() {
        let b = scale_region(0.0, 0.0, &PoolingSpec::default(), GEOM, (14, 14));
        assert_eq!((b.row0, b.col0), (0, 0));
        assert!(b.height() >= 1 && b.width() >= 1);
        assert_eq!((b.height(), b.width()), (2, 2));
    }

    #[test]
    fn seven_cell_map_gives_two_by_two() {
        let b = scale_region(112.0, 112.0, &PoolingSpec::default(), GEOM, (7, 7));
        assert_eq!((b.height(), b.width()), (2, 2));
    }

    #[test]
    fn far_outside_points_keep_one_cell() {
        let spec = PoolingSpec::default();
        let b = scale_region(-500.0, 900.0, &spec, GEOM, (14, 14));
        assert_eq!((b.col0, b.col1), (0, 1));
        assert_eq!((b.row0, b.row1), (13, 14));
    }

    #[test]
    fn tiny_region_has_unit_extent() {
        let spec = PoolingSpec {
            region: (1, 1),
            ..PoolingSpec::default()
        };
        let b = scale_region(100.0, 50.0, &spec, GEOM, (14, 14));
        assert_eq!((b.height(), b.width()), (1, 1));
    }

    fn static_track(frames: usize, x: f64, y: f64) -> LandmarkTrack {
        LandmarkTrack::new("v", vec![vec![Point::new(x, y); NUM_LANDMARKS]; frames]).unwrap()
    }

    fn sequence(frames: usize, c: usize, f: impl Fn(usize, usize, usize, usize) -> f32) -> FeatureMapSequence {
        let mut v = Vec::new();
        for t in 0..frames {
            for ch in 0..c {
                for r in 0..14 {
                    for col in 0..14 {
                        v.push(f(t, ch, r, col));
                    }
                }
            }
        }
        FeatureMapSequence::new("v", "conv5", GEOM, (c, 14, 14), frames, v).unwrap()
    }

    #[test]
    fn constant_maps_pool_to_the_constant() {
        let fm = sequence(3, 4, |_, ch, _, _| ch as f32 + 0.5);
        let bundle = whole_sequence_bundle(&build_trajectories(&static_track(3, 60.0, 130.0)));
        let d = pool_bundle::<f64>(&fm, &bundle, &PoolingSpec::default()).unwrap();
        assert_eq!(d.len(), 68);
        for desc in &d {
            assert_eq!(desc.values, vec![0.5, 1.5, 2.5, 3.5]);
        }
    }

    #[test]
    fn unit_region_reads_the_feature_column() {
        let fm = sequence(1, 3, |_, ch, r, c| (100 * ch + 10 * r + c) as f32);
        let spec = PoolingSpec {
            region: (1, 1),
            ..PoolingSpec::default()
        };
        // (x, y) = (40, 72) -> column 2.5 -> cell 2; row 4.5 -> cell 4
        let bundle = whole_sequence_bundle(&build_trajectories(&static_track(1, 40.0, 72.0)));
        let d = pool_bundle::<f64>(&fm, &bundle, &spec).unwrap();
        let b = scale_region(40.0, 72.0, &spec, GEOM, (14, 14));
        assert_eq!((b.row0, b.col0), (4, 2));
        assert_eq!(d[0].values, vec![42.0, 142.0, 242.0]);
    }

    #[test]
    fn two_frames_average_temporally() {
        let (a, b) = (1.25f32, 4.0f32);
        let fm = sequence(2, 2, |t, _, _, _| if t == 0 { a } else { b });
        let bundle = whole_sequence_bundle(&build_trajectories(&static_track(2, 100.0, 100.0)));
        let d = pool_bundle::<f64>(&fm, &bundle, &PoolingSpec::default()).unwrap();
        assert_eq!(d[7].values, vec![f64::from(a + b) / 2.0; 2]);
    }

    #[test]
    fn bundle_past_the_features_names_the_video() {
        let fm = sequence(2, 1, |_, _, _, _| 0.0);
        let bundle = whole_sequence_bundle(&build_trajectories(&static_track(3, 1.0, 1.0)));
        let err = pool_bundle::<f64>(&fm, &bundle, &PoolingSpec::default()).unwrap_err();
        assert!(err.to_string().contains("video v"));
    }

    #[test]
    fn sum_pooling_scales_by_area_and_length() {
        let fm = sequence(2, 1, |_, _, _, _| 1.0);
        let spec = PoolingSpec {
            spatial: Reduce::Sum,
            temporal: Reduce::Sum,
            ..PoolingSpec::default()
        };
        let bundle = whole_sequence_bundle(&build_trajectories(&static_track(2, 112.0, 112.0)));
        let d = pool_bundle::<f64>(&fm, &bundle, &spec).unwrap();
        assert_eq!(d[0].values, vec![32.0]);
    }

    proptest! {
        #[test]
        fn descriptors_respect_bounds_and_channel_order(
            seed in any::<u32>(),
            x in -20.0f64..250.0,
            y in -20.0f64..250.0,
            frames in 1usize..5,
        ) {
            let val = |t: usize, ch: usize, r: usize, c: usize| {
                let h = (seed as usize ^ (t * 7919 + ch * 104729 + r * 31 + c * 17)) % 1000;
                h as f32 / 100.0 - 5.0
            };
            let fm = sequence(frames, 3, val);
            let swapped = sequence(frames, 3, |t, ch, r, c| val(t, 2 - ch, r, c));
            let bundle = whole_sequence_bundle(&build_trajectories(&static_track(frames, x, y)));
            let spec = PoolingSpec::default();
            let d = pool_bundle::<f64>(&fm, &bundle, &spec).unwrap();
            let ds = pool_bundle::<f64>(&swapped, &bundle, &spec).unwrap();
            prop_assert_eq!(d.len(), 68);
            let cells = scale_region(x, y, &spec, GEOM, (14, 14));
            for ch in 0..3 {
                prop_assert_eq!(d[0].values[ch], ds[0].values[2 - ch]);
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for t in 0..frames {
                    for r in cells.row0..cells.row1 {
                        for c in cells.col0..cells.col1 {
                            lo = lo.min(f64::from(val(t, ch, r, c)));
                            hi = hi.max(f64::from(val(t, ch, r, c)));
                        }
                    }
                }
                prop_assert!(d[0].values[ch] >= lo - 1e-9 && d[0].values[ch] <= hi + 1e-9);
            }
        }

        #[test]
        fn padding_outside_a_window_is_ignored(seed in any::<u16>()) {
            let base = |t: usize, ch: usize, r: usize, c: usize| ((t * 13 + ch * 5 + r + c + seed as usize) % 17) as f32;
            let fm = sequence(20, 2, base);
            let padded = sequence(20, 2, |t, ch, r, c| if (6..14).contains(&t) { base(t, ch, r, c) } else { 99.0 });
            let track = static_track(20, 90.0, 120.0);
            let windows = split_windows(&build_trajectories(&track), WindowSpec::new(8, 1).unwrap());
            let w = windows.iter().find(|b| b.start_frame == 6).unwrap();
            let spec = PoolingSpec::default();
            prop_assert_eq!(
                pool_bundle::<f64>(&fm, w, &spec).unwrap(),
                pool_bundle::<f64>(&padded, w, &spec).unwrap()
            );
        }
    }
}
