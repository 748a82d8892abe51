//! Synthetic tempo-controlled video data: generation, on-disk layout, clip
//! sampling schemes and inference crop protocols.

pub mod crops;
pub mod io;
pub mod sampling;
pub mod synth;

pub use crops::{crop_protocol, resize_shorter_side, CropProtocol};
pub use io::{load_dataset, save_dataset};
pub use sampling::{sample_clip, sample_segments, SampleMode, SampleScheme};
pub use synth::{generate_split, generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frame storage: rank-4 (time, channel, height, width), `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Frames {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Frames {
    pub fn zeros(t: usize, c: usize, h: usize, w: usize) -> Self {
        Frames { t, c, h, w, data: vec![0.0; t * c * h * w] }
    }

    pub fn frame(&self, ti: usize) -> &[f32] {
        let n = self.c * self.h * self.w;
        &self.data[ti * n..(ti + 1) * n]
    }

    /// Gathers the given frame indices into a new clip.
    pub fn gather(&self, indices: &[usize]) -> Result<Frames> {
        let n = self.c * self.h * self.w;
        let mut out = Frames::zeros(indices.len(), self.c, self.h, self.w);
        for (k, &ti) in indices.iter().enumerate() {
            if ti >= self.t {
                return Err(Error::Data(format!(
                    "frame index {ti} out of range for {}-frame video",
                    self.t
                )));
            }
            out.data[k * n..(k + 1) * n].copy_from_slice(self.frame(ti));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct VideoRecord {
    pub id: String,
    pub class_id: usize,
    pub frames: Frames,
    /// Generator ground truth: the instance's speed in pixels per frame.
    pub instance_tempo: f64,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize, PartialEq, Eq)]
pub struct DatasetMeta {
    pub num_classes: usize,
    pub frame_size: usize,
    pub channels: usize,
    pub video_len: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<VideoRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Stacks (time, channel, h, w) clips into the model input layout
/// (batch, channel, time, h, w) at `f64`.
pub fn clips_to_batch(clips: &[Frames]) -> Result<Tensor> {
    let first = clips.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (t, c, h, w) = (first.t, first.c, first.h, first.w);
    let mut out = Tensor::zeros(&[clips.len(), c, t, h, w]);
    let plane = h * w;
    let od = out.data_mut();
    for (b, clip) in clips.iter().enumerate() {
        if (clip.t, clip.c, clip.h, clip.w) != (t, c, h, w) {
            return Err(Error::Shape("clips in a batch must share shape".into()));
        }
        for ti in 0..t {
            for ci in 0..c {
                let src = &clip.data[(ti * c + ci) * plane..][..plane];
                let dst = ((b * c + ci) * t + ti) * plane;
                for (k, &v) in src.iter().enumerate() {
                    od[dst + k] = v as f64;
                }
            }
        }
    }
    Ok(out)
}
