use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_tensor_file, DType, Tensor, TensorData, TensorHeader};

/// Per-frame backbone activations for one video, stored `[frame, channel, row, col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapSequence {
    pub video_id: String,
    pub layer_tag: String,
    pub source_height: usize,
    pub source_width: usize,
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureMapSequence {
    /// Build from frame-major values. Checks every invariant of the type.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        video_id: impl Into<String>,
        layer_tag: impl Into<String>,
        source_dims: (usize, usize),
        map_dims: (usize, usize, usize),
        frames: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        let (channels, height, width) = map_dims;
        let bad = |message: String| Error::Video {
            video_id: video_id.clone(),
            message,
        };
        if frames == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(bad(format!(
                "degenerate feature geometry: {frames} frames of {channels}x{height}x{width}"
            )));
        }
        if source_dims.0 < height || source_dims.1 < width {
            return Err(bad(format!(
                "source {}x{} smaller than feature map {height}x{width}",
                source_dims.0, source_dims.1
            )));
        }
        if values.len() != frames * channels * height * width {
            return Err(bad(format!(
                "{} values for {frames} frames of {channels}x{height}x{width}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite activation at flat index {i}")));
        }
        Ok(FeatureMapSequence {
            video_id: video_id.clone(),
            layer_tag: layer_tag.into(),
            source_height: source_dims.0,
            source_width: source_dims.1,
            channels,
            height,
            width,
            values,
        })
    }

    /// Interpret a 3-D `[C, H, W]` (single frame) or 4-D `[T, C, H, W]` tensor.
    pub fn from_tensor(video_id: impl Into<String>, tensor: Tensor) -> Result<Self> {
        let video_id = video_id.into();
        let header = &tensor.header;
        let (frames, c, h, w) = match header.shape.as_slice() {
            &[c, h, w] => (1, c, h, w),
            &[t, c, h, w] => (t, c, h, w),
            other => {
                return Err(Error::Video {
                    video_id,
                    message: format!("feature tensor must be 3-D or 4-D, got shape {other:?}"),
                })
            }
        };
        let missing = |field: &str| Error::Video {
            video_id: video_id.clone(),
            message: format!("feature tensor header lacks {field}"),
        };
        let sh = header.source_height.ok_or_else(|| missing("source_height"))?;
        let sw = header.source_width.ok_or_else(|| missing("source_width"))?;
        let tag = header.layer_tag.clone().unwrap_or_else(|| "conv5".to_string());
        Self::new(video_id, tag, (sh, sw), (c, h, w), frames, tensor.into_f32_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        let mut header = TensorHeader::new(
            DType::F32,
            vec![self.frame_count(), self.channels, self.height, self.width],
        );
        header.layer_tag = Some(self.layer_tag.clone());
        header.source_height = Some(self.source_height);
        header.source_width = Some(self.source_width);
        Tensor {
            header,
            data: TensorData::F32(self.values.clone()),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.values.len() / self.frame_len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width)` of each feature map.
    pub fn map_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn source_dims(&self) -> (usize, usize) {
        (self.source_height, self.source_width)
    }

    fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// `[C, H, W]` slice of one frame.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn value(&self, t: usize, channel: usize, row: usize, col: usize) -> f32 {
        self.frame(t)[(channel * self.height + row) * self.width + col]
    }
}

pub fn read_feature_sequence(path: impl AsRef<Path>, video_id: &str) -> Result<FeatureMapSequence> {
    FeatureMapSequence::from_tensor(video_id, read_tensor_file(path)?)
}
