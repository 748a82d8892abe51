//! Tempo analyses: frame-wise probability curves, per-class tempo
//! variance, gain-vs-variance binning with a least-squares fit, and the
//! stride-robustness sweep.

use super::fwhm::fwhm;
use super::{ClassTempoStats, GainVariance, GainVarianceBin, ProbCurve, TempoRecord};
use crate::data::{clips_to_batch, Dataset, SampleScheme, VideoRecord};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::train::eval::{evaluate, worker_pool};
use crate::train::EvalReport;
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Applies the model to every frame independently (each frame a one-frame
/// clip) and records the softmax probability of the video's true class.
pub fn frame_probabilities(model: &Model, video: &VideoRecord) -> Result<ProbCurve> {
    let t = video.frames.t;
    let clips: Vec<_> = (0..t)
        .map(|ti| video.frames.gather(&[ti]))
        .collect::<Result<Vec<_>>>()?;
    let batch = clips_to_batch(&clips)?;
    let probs = model.eval_probs(&batch)?;
    let [rows, k] = probs.dims2()?;
    debug_assert_eq!(rows, t);
    if video.class_id >= k {
        return Err(Error::Data(format!(
            "video {} labelled {} but model has {k} classes",
            video.id, video.class_id
        )));
    }
    let values = (0..t).map(|r| probs.data()[r * k + video.class_id]).collect();
    Ok(ProbCurve { video_id: video.id.clone(), values })
}

/// FWHM tempo records for every video in the dataset.
pub fn compute_tempo_records(model: &Model, ds: &Dataset) -> Result<Vec<TempoRecord>> {
    let curves: Vec<Result<ProbCurve>> = worker_pool()
        .install(|| ds.records.par_iter().map(|v| frame_probabilities(model, v)).collect());
    let mut out = Vec::with_capacity(ds.len());
    for (video, curve) in ds.records.iter().zip(curves) {
        let curve = curve?;
        out.push(TempoRecord {
            video_id: curve.video_id.clone(),
            class_id: video.class_id,
            fwhm: fwhm(&curve.values),
        });
    }
    Ok(out)
}

/// Population variance of FWHM per class, sorted by descending variance
/// (ties broken by class id for determinism).
pub fn class_tempo_variance(records: &[TempoRecord]) -> Vec<ClassTempoStats> {
    let mut by_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.class_id).or_default().push(r.fwhm);
    }
    let mut out: Vec<ClassTempoStats> = by_class
        .into_iter()
        .map(|(class_id, xs)| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let variance = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            ClassTempoStats { class_id, variance, count: xs.len() }
        })
        .collect();
    out.sort_by(|a, b| {
        b.variance
            .partial_cmp(&a.variance)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.class_id.cmp(&b.class_id))
    });
    out
}

/// Bins per-class accuracy gains by tempo variance and fits a least-squares
/// line over (bin centre, mean gain). Needs at least two non-empty bins.
pub fn gain_vs_variance(
    stats: &[ClassTempoStats],
    base: &EvalReport,
    tpn: &EvalReport,
    bin_width: f64,
) -> Result<GainVariance> {
    if bin_width <= 0.0 {
        return Err(Error::Invalid("bin width must be positive".into()));
    }
    let mut bins: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for s in stats {
        let b = base.per_class_top1.get(&s.class_id).ok_or_else(|| {
            Error::Invalid(format!("baseline report misses class {}", s.class_id))
        })?;
        let t = tpn.per_class_top1.get(&s.class_id).ok_or_else(|| {
            Error::Invalid(format!("pyramid report misses class {}", s.class_id))
        })?;
        let gain = t - b;
        let ix = (s.variance / bin_width).floor() as u64;
        let e = bins.entry(ix).or_insert((0.0, 0));
        e.0 += gain;
        e.1 += 1;
    }
    let bins: Vec<GainVarianceBin> = bins
        .into_iter()
        .map(|(ix, (sum, count))| GainVarianceBin {
            lo: ix as f64 * bin_width,
            hi: (ix + 1) as f64 * bin_width,
            mean_gain: sum / count as f64,
            num_classes: count,
        })
        .collect();
    if bins.len() < 2 {
        return Err(Error::Data(format!(
            "correlation undefined: only {} non-empty variance bin(s)",
            bins.len()
        )));
    }

    let xs: Vec<f64> = bins.iter().map(|b| (b.lo + b.hi) / 2.0).collect();
    let ys: Vec<f64> = bins.iter().map(|b| b.mean_gain).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let pearson_r = if syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    Ok(GainVariance { bins, slope, intercept, pearson_r })
}

/// Result of evaluating one re-sampling stride.
#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub stride: usize,
    /// Top-1 accuracy, or the failure message for strides the videos
    /// cannot support (the sweep continues past them).
    pub top1: std::result::Result<f64, String>,
}

/// Evaluates the frozen model with `frames` frames re-sampled at each
/// stride. The clip window is exactly frames x stride, centered per video.
pub fn robustness_sweep(
    model: &Model,
    ds: &Dataset,
    strides: &[usize],
    frames: usize,
) -> Result<Vec<SweepEntry>> {
    if ds.is_empty() {
        return Err(Error::Invalid("robustness sweep over an empty dataset".into()));
    }
    let mut sorted: Vec<usize> = strides.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = Vec::with_capacity(sorted.len());
    for stride in sorted {
        let window = frames * stride;
        let entry = if stride == 0 {
            Err("stride must be positive".to_string())
        } else if window > ds.meta.video_len {
            Err(format!(
                "{frames} frames at stride {stride} need {window} frames, videos have {}",
                ds.meta.video_len
            ))
        } else {
            let scheme = SampleScheme::windowed(frames, stride, window);
            evaluate(model, ds, &scheme, crate::data::CropProtocol::None, 1)
                .map(|r| r.top1)
                .map_err(|e| e.to_string())
        };
        out.push(SweepEntry { stride, top1: entry });
    }
    Ok(out)
}

/// max - min accuracy over the successful strides of a sweep.
pub fn sweep_spread(entries: &[SweepEntry]) -> Option<f64> {
    let vals: Vec<f64> = entries.iter().filter_map(|e| e.top1.as_ref().ok().copied()).collect();
    if vals.is_empty() {
        return None;
    }
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Some(hi - lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn report(pairs: &[(usize, f64)]) -> EvalReport {
        EvalReport {
            top1: 0.0,
            top5: 0.0,
            per_class_top1: pairs.iter().cloned().collect::<BTreeMap<_, _>>(),
            num_samples: pairs.len(),
        }
    }

    fn stats(pairs: &[(usize, f64)]) -> Vec<ClassTempoStats> {
        pairs
            .iter()
            .map(|&(class_id, variance)| ClassTempoStats { class_id, variance, count: 5 })
            .collect()
    }

    #[test]
    fn variance_formula_and_sorting() {
        let records = vec![
            TempoRecord { video_id: "a".into(), class_id: 0, fwhm: 2.0 },
            TempoRecord { video_id: "b".into(), class_id: 0, fwhm: 2.0 },
            TempoRecord { video_id: "c".into(), class_id: 0, fwhm: 2.0 },
            TempoRecord { video_id: "d".into(), class_id: 1, fwhm: 1.0 },
            TempoRecord { video_id: "e".into(), class_id: 1, fwhm: 3.0 },
        ];
        let stats = class_tempo_variance(&records);
        assert_eq!(stats[0].class_id, 1);
        assert_eq!(stats[0].variance, 1.0);
        assert_eq!(stats[1].class_id, 0);
        assert_eq!(stats[1].variance, 0.0);
    }

    #[test]
    fn variance_is_permutation_invariant() {
        let mut records = vec![
            TempoRecord { video_id: "a".into(), class_id: 0, fwhm: 1.5 },
            TempoRecord { video_id: "b".into(), class_id: 1, fwhm: 4.0 },
            TempoRecord { video_id: "c".into(), class_id: 0, fwhm: 2.5 },
            TempoRecord { video_id: "d".into(), class_id: 1, fwhm: 0.5 },
        ];
        let s1 = class_tempo_variance(&records);
        records.reverse();
        let s2 = class_tempo_variance(&records);
        for (a, b) in s1.iter().zip(&s2) {
            assert_eq!(a.class_id, b.class_id);
            assert_eq!(a.variance, b.variance);
        }
    }

    #[test]
    fn identical_reports_give_zero_gain_and_slope() {
        let r = report(&[(0, 0.5), (1, 0.75), (2, 1.0)]);
        let st = stats(&[(0, 5.0), (1, 15.0), (2, 25.0)]);
        let gv = gain_vs_variance(&st, &r, &r, 10.0).unwrap();
        assert_eq!(gv.slope, 0.0);
        assert_eq!(gv.pearson_r, 0.0);
        assert!(gv.bins.iter().all(|b| b.mean_gain == 0.0));
    }

    #[test]
    fn perfect_linear_relation_fits_exactly() {
        // bin centres 5, 15, 25 with mean gains on y = 2x
        let base = report(&[(0, 0.0), (1, 0.0), (2, 0.0)]);
        let tpn = report(&[(0, 10.0), (1, 30.0), (2, 50.0)]);
        let st = stats(&[(0, 5.0), (1, 15.0), (2, 25.0)]);
        let gv = gain_vs_variance(&st, &base, &tpn, 10.0).unwrap();
        assert!((gv.slope - 2.0).abs() < 1e-12, "slope {}", gv.slope);
        assert!((gv.pearson_r - 1.0).abs() < 1e-12, "r {}", gv.pearson_r);
    }

    #[test]
    fn swapping_reports_negates_gains_and_slope() {
        let base = report(&[(0, 0.2), (1, 0.4), (2, 0.9)]);
        let tpn = report(&[(0, 0.5), (1, 0.5), (2, 1.0)]);
        let st = stats(&[(0, 3.0), (1, 14.0), (2, 27.0)]);
        let ab = gain_vs_variance(&st, &base, &tpn, 10.0).unwrap();
        let ba = gain_vs_variance(&st, &tpn, &base, 10.0).unwrap();
        assert_eq!(ab.slope, -ba.slope);
        for (x, y) in ab.bins.iter().zip(&ba.bins) {
            assert_eq!(x.mean_gain, -y.mean_gain);
        }
    }

    #[test]
    fn single_bin_is_a_correlation_error() {
        let r = report(&[(0, 0.5), (1, 0.6)]);
        let st = stats(&[(0, 1.0), (1, 2.0)]);
        assert!(matches!(
            gain_vs_variance(&st, &r, &r, 10.0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn missing_class_in_report_is_invalid() {
        let base = report(&[(0, 0.5)]);
        let tpn = report(&[(0, 0.5), (1, 0.6)]);
        let st = stats(&[(0, 1.0), (1, 22.0)]);
        assert!(matches!(
            gain_vs_variance(&st, &base, &tpn, 10.0),
            Err(Error::Invalid(_))
        ));
    }
}
