//! Config-driven experiments: one TOML file describes the backbone, the
//! optional pyramid, the data source and sampling scheme, training,
//! evaluation and analysis. Every command validates the whole file before
//! touching the filesystem.

use crate::backbone::BackboneSpec;
use crate::data::{CropProtocol, SampleMode, SampleScheme, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tpn::PyramidConfig;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataSection {
    /// Dataset root (written by gen-data, read by everything else).
    pub path: PathBuf,
    /// Generation recipe; required by gen-data, ignored elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    pub sampling: SampleScheme,
}

fn default_clips() -> usize {
    1
}

fn default_crop() -> CropProtocol {
    CropProtocol::None
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSection {
    #[serde(default = "default_crop")]
    pub crop: CropProtocol,
    #[serde(default = "default_clips")]
    pub clips_per_video: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { crop: CropProtocol::None, clips_per_video: 1 }
    }
}

fn default_bin_width() -> f64 {
    10.0
}

fn default_strides() -> Vec<usize> {
    vec![2, 4, 6, 10, 12, 14, 16]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisSection {
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
    #[serde(default = "default_strides")]
    pub strides: Vec<usize>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection { bin_width: default_bin_width(), strides: default_strides() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub backbone: BackboneSpec,
    /// Absent means the plain baseline model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tpn: Option<PyramidConfig>,
    pub data: DataSection,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Whole-config validation: every section plus the cross-section
    /// consistency constraints, before any side effects.
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if let Some(tpn) = &self.tpn {
            crate::tpn::resolve(tpn, &self.backbone)?;
        }
        self.data.sampling.validate()?;
        if self.data.sampling.clip_frames() != self.backbone.input_frames {
            return Err(Error::config(
                "data.sampling",
                format!(
                    "sampling yields {}-frame clips but backbone.input_frames is {}",
                    self.data.sampling.clip_frames(),
                    self.backbone.input_frames
                ),
            ));
        }
        if let Some(synth) = &self.data.synthetic {
            synth.validate()?;
            if synth.channels != self.backbone.in_channels {
                return Err(Error::config(
                    "data.synthetic.channels",
                    format!(
                        "dataset has {} channels, backbone expects {}",
                        synth.channels, self.backbone.in_channels
                    ),
                ));
            }
            if self.data.sampling.mode == SampleMode::Windowed
                && synth.video_len < self.data.sampling.window
            {
                return Err(Error::config(
                    "data.synthetic.video_len",
                    format!(
                        "videos of {} frames cannot hold the {}-frame sampling window",
                        synth.video_len, self.data.sampling.window
                    ),
                ));
            }
        }
        self.train.validate()?;
        if self.eval.clips_per_video == 0 {
            return Err(Error::config("eval.clips_per_video", "must be positive"));
        }
        if self.analysis.bin_width <= 0.0 {
            return Err(Error::config("analysis.bin_width", "must be positive"));
        }
        if self.analysis.strides.is_empty() || self.analysis.strides.contains(&0) {
            return Err(Error::config("analysis.strides", "need positive strides"));
        }
        Ok(())
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            tpn: self.tpn.clone(),
            num_classes,
            head_dropout: self.train.dropout,
            seed: self.train.seed,
        }
    }

    /// Serializes the resolved config; written to `out_dir/config.lock` by
    /// every command for provenance.
    pub fn to_lock_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Data(format!("config lock failed: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
out_dir = "runs/demo"

[backbone]
kind = "conv3d"
depth_blocks = [1, 1, 1, 1]
base_channels = 8
temporal_kernels = [1, 1, 3, 3]
input_frames = 8
input_size = 32
in_channels = 1

[tpn]
source_mode = "multi_depth"
stages = [4, 5]
alphas = [4, 8]
flow = "parallel"
lambdas = [0.5]
dropout = 0.5

[data]
path = "data/demo"

[data.synthetic]
num_classes = 4
videos_per_class = 8
video_len = 64
frame_size = 32
tempo_mean = [0.9, 2.2, 1.2, 1.2]
tempo_sigma = [0.2, 0.5, 0.05, 0.6]
noise_sigma = 0.02
seed = 7
channels = 1

[data.sampling]
mode = "windowed"
frames = 8
stride = 8
window = 64

[train]
lr = 0.02
epochs = 2
milestones = [1]
batch_size = 8
seed = 1

[eval]
crop = "none"
clips_per_video = 1

[analysis]
bin_width = 10.0
strides = [2, 4, 6, 10, 12, 14, 16]
"#;

    #[test]
    fn sample_config_parses_and_validates() {
        let cfg: ExperimentConfig = toml::from_str(SAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.backbone.base_channels, 8);
        assert!(cfg.tpn.is_some());
        assert_eq!(cfg.analysis.strides, vec![2, 4, 6, 10, 12, 14, 16]);
        // defaults land
        assert_eq!(cfg.train.momentum, 0.9);
        assert_eq!(cfg.train.weight_decay, 1e-4);
        assert_eq!(cfg.eval.clips_per_video, 1);
    }

    #[test]
    fn lock_round_trips() {
        let cfg: ExperimentConfig = toml::from_str(SAMPLE).unwrap();
        let lock = cfg.to_lock_string().unwrap();
        let back: ExperimentConfig = toml::from_str(&lock).unwrap();
        back.validate().unwrap();
        assert_eq!(lock, back.to_lock_string().unwrap());
    }

    #[test]
    fn cross_section_mismatch_is_caught() {
        let mut cfg: ExperimentConfig = toml::from_str(SAMPLE).unwrap();
        cfg.backbone.input_frames = 16;
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "data.sampling"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn missing_seed_is_a_parse_error_naming_the_field() {
        let broken = SAMPLE.replace("seed = 7\n", "");
        let err = toml::from_str::<ExperimentConfig>(&broken).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn baseline_config_omits_tpn() {
        let no_tpn: String = SAMPLE
            .lines()
            .skip_while(|_| false)
            .collect::<Vec<_>>()
            .join("\n")
            .replace(
                r#"[tpn]
source_mode = "multi_depth"
stages = [4, 5]
alphas = [4, 8]
flow = "parallel"
lambdas = [0.5]
dropout = 0.5

"#,
                "",
            );
        let cfg: ExperimentConfig = toml::from_str(&no_tpn).unwrap();
        cfg.validate().unwrap();
        assert!(cfg.tpn.is_none());
    }
}
