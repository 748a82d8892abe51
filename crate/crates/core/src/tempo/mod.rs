//! Visual-tempo measurement and the analyses built on it, plus the CSV/JSON
//! emitters for their results.

pub mod analysis;
pub mod fwhm;

pub use analysis::{
    class_tempo_variance, compute_tempo_records, frame_probabilities, gain_vs_variance,
    robustness_sweep, sweep_spread, SweepEntry,
};
pub use fwhm::fwhm;

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Per-frame probability of the true class for one video.
#[derive(Clone, Debug)]
pub struct ProbCurve {
    pub video_id: String,
    pub values: Vec<f64>,
}

/// One instance's measured visual tempo.
#[derive(Clone, Debug)]
pub struct TempoRecord {
    pub video_id: String,
    pub class_id: usize,
    pub fwhm: f64,
}

/// Per-class tempo-variance aggregate.
#[derive(Clone, Debug)]
pub struct ClassTempoStats {
    pub class_id: usize,
    pub variance: f64,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct GainVarianceBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_gain: f64,
    pub num_classes: usize,
}

#[derive(Clone, Debug)]
pub struct GainVariance {
    pub bins: Vec<GainVarianceBin>,
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_tempo_records(path: &Path, records: &[TempoRecord]) -> Result<()> {
    let mut s = String::from("video_id,class_id,fwhm\n");
    for r in records {
        let _ = writeln!(s, "{},{},{}", r.video_id, r.class_id, r.fwhm);
    }
    write_file(path, &s)
}

pub fn write_class_variance(path: &Path, stats: &[ClassTempoStats]) -> Result<()> {
    let mut s = String::from("class_id,variance,count,rank\n");
    for (rank, st) in stats.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{}", st.class_id, st.variance, st.count, rank);
    }
    write_file(path, &s)
}

pub fn write_gain_bins(path: &Path, gv: &GainVariance) -> Result<()> {
    let mut s = String::from("bin_lo,bin_hi,mean_gain,num_classes\n");
    for b in &gv.bins {
        let _ = writeln!(s, "{},{},{},{}", b.lo, b.hi, b.mean_gain, b.num_classes);
    }
    write_file(path, &s)
}

pub fn write_fit(path: &Path, gv: &GainVariance) -> Result<()> {
    let json = serde_json::json!({
        "slope": gv.slope,
        "intercept": gv.intercept,
        "pearson_r": gv.pearson_r,
    });
    write_file(
        path,
        &serde_json::to_string_pretty(&json).expect("static json structure"),
    )
}

pub fn write_robustness(path: &Path, entries: &[SweepEntry]) -> Result<()> {
    let mut s = String::from("stride,top1\n");
    for e in entries {
        match &e.top1 {
            Ok(v) => {
                let _ = writeln!(s, "{},{}", e.stride, v);
            }
            Err(msg) => {
                log::warn!("stride {} skipped: {msg}", e.stride);
            }
        }
    }
    write_file(path, &s)
}
