//! Evaluation protocols: per video, softmax probabilities are averaged over
//! all crops of all clips, and accuracy is computed on the averaged
//! distribution. Per-video work is read-only over a frozen model and runs
//! on a worker pool capped by `TPN_NUM_WORKERS`.

use crate::data::{
    clips_to_batch, crop_protocol, sample_clip, sample_segments, sampling, CropProtocol, Dataset,
    SampleMode, SampleScheme,
};
use crate::error::{Error, Result};
use crate::model::Model;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::OnceLock;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    pub per_class_top1: BTreeMap<usize, f64>,
    pub num_samples: usize,
}

/// Worker pool for per-video parallelism; `TPN_NUM_WORKERS` caps its size.
pub fn worker_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(n) = std::env::var("TPN_NUM_WORKERS") {
            if let Ok(n) = n.parse::<usize>() {
                builder = builder.num_threads(n.max(1));
            }
        }
        builder.build().expect("worker pool")
    })
}

/// Evenly spaced window starts covering the whole video; one clip sits at
/// the centre.
fn clip_starts(video_len: usize, window: usize, clips: usize) -> Result<Vec<usize>> {
    let max_start = video_len.checked_sub(window).ok_or_else(|| {
        Error::Data(format!("window {window} exceeds the {video_len}-frame video"))
    })?;
    if clips <= 1 {
        return Ok(vec![max_start / 2]);
    }
    Ok((0..clips).map(|i| i * max_start / (clips - 1)).collect())
}

/// Averaged class probabilities for one video under the given protocol.
pub fn video_probs(
    model: &Model,
    video: &crate::data::VideoRecord,
    scheme: &SampleScheme,
    protocol: CropProtocol,
    clips_per_video: usize,
) -> Result<Vec<f64>> {
    let clips = match scheme.mode {
        SampleMode::Windowed => {
            let starts = clip_starts(video.frames.t, scheme.window, clips_per_video)?;
            starts
                .into_iter()
                .map(|s| sample_clip(video, scheme, s))
                .collect::<Result<Vec<_>>>()?
        }
        SampleMode::Segments => vec![sample_segments(video, scheme.num_segments, None)?],
    };
    let mut crops = Vec::new();
    for clip in &clips {
        crops.extend(crop_protocol(clip, protocol)?);
    }
    let batch = clips_to_batch(&crops)?;
    let probs = model.eval_probs(&batch)?;
    let [rows, k] = probs.dims2()?;
    let mut avg = vec![0.0; k];
    for r in 0..rows {
        for c in 0..k {
            avg[c] += probs.data()[r * k + c];
        }
    }
    for v in &mut avg {
        *v /= rows as f64;
    }
    Ok(avg)
}

/// Full-dataset evaluation; top-5 saturates when there are five or fewer
/// classes. Per-class accuracy is included for the tempo analysis.
pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    scheme: &SampleScheme,
    protocol: CropProtocol,
    clips_per_video: usize,
) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::Invalid("evaluation dataset is empty".into()));
    }
    scheme.validate()?;
    let results: Vec<Result<Vec<f64>>> = worker_pool().install(|| {
        ds.records
            .par_iter()
            .map(|video| video_probs(model, video, scheme, protocol, clips_per_video))
            .collect()
    });

    let k = ds.meta.num_classes;
    let top_n = k.min(5);
    let mut correct1 = 0usize;
    let mut correct5 = 0usize;
    let mut class_total: BTreeMap<usize, usize> = BTreeMap::new();
    let mut class_hit: BTreeMap<usize, usize> = BTreeMap::new();
    for (video, probs) in ds.records.iter().zip(results) {
        let probs = probs?;
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap_or(std::cmp::Ordering::Equal));
        let hit1 = order[0] == video.class_id;
        let hit5 = order[..top_n.min(order.len())].contains(&video.class_id);
        correct1 += hit1 as usize;
        correct5 += hit5 as usize;
        *class_total.entry(video.class_id).or_default() += 1;
        *class_hit.entry(video.class_id).or_default() += hit1 as usize;
    }

    let n = ds.len();
    let per_class_top1 = class_total
        .iter()
        .map(|(&c, &total)| (c, class_hit.get(&c).copied().unwrap_or(0) as f64 / total as f64))
        .collect();
    Ok(EvalReport {
        top1: correct1 as f64 / n as f64,
        top5: correct5 as f64 / n as f64,
        per_class_top1,
        num_samples: n,
    })
}
