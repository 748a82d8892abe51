//! Clip sampling: T frames at stride tau from a consecutive-frame window,
//! or one frame from each of N uniform segments.

use super::{Frames, VideoRecord};
use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Windowed,
    Segments,
}

fn default_window() -> usize {
    64
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SampleScheme {
    pub mode: SampleMode,
    /// Windowed: frames per clip (T).
    #[serde(default = "one")]
    pub frames: usize,
    /// Windowed: sampling interval (tau).
    #[serde(default = "one")]
    pub stride: usize,
    /// Windowed: length of the consecutive-frame window.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Segments: number of uniform segments.
    #[serde(default = "one")]
    pub num_segments: usize,
}

impl SampleScheme {
    pub fn windowed(frames: usize, stride: usize, window: usize) -> Self {
        SampleScheme { mode: SampleMode::Windowed, frames, stride, window, num_segments: 1 }
    }

    pub fn segments(n: usize) -> Self {
        SampleScheme { mode: SampleMode::Segments, frames: 1, stride: 1, window: 64, num_segments: n }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            SampleMode::Windowed => {
                if self.frames == 0 || self.stride == 0 {
                    return Err(Error::config("data.sampling", "frames and stride must be positive"));
                }
                if self.frames * self.stride > self.window {
                    return Err(Error::config(
                        "data.sampling",
                        format!(
                            "frames x stride = {} exceeds the {}-frame window",
                            self.frames * self.stride,
                            self.window
                        ),
                    ));
                }
                Ok(())
            }
            SampleMode::Segments => {
                if self.num_segments == 0 {
                    return Err(Error::config("data.sampling.num_segments", "must be positive"));
                }
                Ok(())
            }
        }
    }

    /// Frames a clip consumes per video.
    pub fn clip_frames(&self) -> usize {
        match self.mode {
            SampleMode::Windowed => self.frames,
            SampleMode::Segments => self.num_segments,
        }
    }
}

/// Frame indices start, start+tau, ..., start+(T-1)*tau.
pub fn windowed_indices(frames: usize, stride: usize, start: usize) -> Vec<usize> {
    (0..frames).map(|k| start + k * stride).collect()
}

/// Extracts a windowed clip beginning at `start` (an offset of the whole
/// window within the video).
pub fn sample_clip(video: &VideoRecord, scheme: &SampleScheme, start: usize) -> Result<Frames> {
    if scheme.mode != SampleMode::Windowed {
        return Err(Error::Invalid("sample_clip requires a windowed scheme".into()));
    }
    scheme.validate()?;
    if start + scheme.window > video.frames.t {
        return Err(Error::Data(format!(
            "window [{start}, {}) exceeds the {}-frame video {}",
            start + scheme.window,
            video.frames.t,
            video.id
        )));
    }
    video.frames.gather(&windowed_indices(scheme.frames, scheme.stride, start))
}

/// Centered window start for deterministic evaluation.
pub fn centered_start(video_len: usize, window: usize) -> Result<usize> {
    if window > video_len {
        return Err(Error::Data(format!(
            "window {window} exceeds the {video_len}-frame video"
        )));
    }
    Ok((video_len - window) / 2)
}

/// Uniformly random window start for training.
pub fn random_start(video_len: usize, window: usize, rng: &mut Rng) -> Result<usize> {
    if window > video_len {
        return Err(Error::Data(format!(
            "window {window} exceeds the {video_len}-frame video"
        )));
    }
    Ok(rng.below(video_len - window + 1))
}

/// Segment frame indices: the video is split into n equal spans; training
/// picks a uniformly random frame per span, evaluation the span centre.
pub fn segment_indices(len: usize, n: usize, rng: Option<&mut Rng>) -> Result<Vec<usize>> {
    if len < n {
        return Err(Error::Data(format!("cannot draw {n} segments from {len} frames")));
    }
    let mut out = Vec::with_capacity(n);
    match rng {
        Some(rng) => {
            for i in 0..n {
                let lo = i * len / n;
                let hi = (i + 1) * len / n;
                out.push(lo + rng.below(hi - lo));
            }
        }
        None => {
            for i in 0..n {
                out.push((2 * i + 1) * len / (2 * n));
            }
        }
    }
    Ok(out)
}

/// One frame per uniform segment; `rng` given means training-style random
/// picks, absent means deterministic span centres.
pub fn sample_segments(video: &VideoRecord, n: usize, rng: Option<&mut Rng>) -> Result<Frames> {
    let idx = segment_indices(video.frames.t, n, rng)?;
    video.frames.gather(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Frames;

    fn video(len: usize) -> VideoRecord {
        // frame t has constant value t so gathered clips reveal indices
        let mut frames = Frames::zeros(len, 1, 2, 2);
        for t in 0..len {
            for v in &mut frames.data[t * 4..(t + 1) * 4] {
                *v = t as f32;
            }
        }
        VideoRecord { id: "v".into(), class_id: 0, frames, instance_tempo: 1.0 }
    }

    fn clip_indices(clip: &Frames) -> Vec<usize> {
        (0..clip.t).map(|t| clip.frame(t)[0] as usize).collect()
    }

    #[test]
    fn windowed_arithmetic_progressions() {
        let v = video(64);
        let clip = sample_clip(&v, &SampleScheme::windowed(8, 8, 64), 0).unwrap();
        assert_eq!(clip_indices(&clip), vec![0, 8, 16, 24, 32, 40, 48, 56]);
        let clip = sample_clip(&v, &SampleScheme::windowed(32, 2, 64), 0).unwrap();
        assert_eq!(clip_indices(&clip), (0..=62).step_by(2).collect::<Vec<_>>());
    }

    #[test]
    fn window_overflow_is_a_config_error() {
        let v = video(64);
        // 8 x 16 needs frame index 112 inside a 64-frame window
        let err = sample_clip(&v, &SampleScheme::windowed(8, 16, 64), 0).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }

    #[test]
    fn start_beyond_video_is_a_data_error() {
        let v = video(64);
        let err = sample_clip(&v, &SampleScheme::windowed(8, 8, 64), 1).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn eval_segments_hit_span_centres() {
        let v = video(64);
        let clip = sample_segments(&v, 8, None).unwrap();
        assert_eq!(clip_indices(&clip), vec![4, 12, 20, 28, 36, 44, 52, 60]);
        let one = sample_segments(&v, 1, None).unwrap();
        assert_eq!(clip_indices(&one), vec![32]);
    }

    #[test]
    fn train_segments_are_seeded_and_in_span() {
        let v = video(64);
        let draw = || {
            let mut rng = crate::rng::SeedKey::new(9).tag("seg").rng();
            clip_indices(&sample_segments(&v, 8, Some(&mut rng)).unwrap())
        };
        let a = draw();
        let b = draw();
        assert_eq!(a, b, "fixed seed must reproduce indices");
        for (i, &ix) in a.iter().enumerate() {
            assert!(ix >= i * 8 && ix < (i + 1) * 8, "index {ix} outside span {i}");
        }
    }

    #[test]
    fn too_few_frames_for_segments() {
        let v = video(4);
        assert!(matches!(sample_segments(&v, 8, None), Err(Error::Data(_))));
    }
}
