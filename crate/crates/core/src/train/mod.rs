//! Desk-scale optimization: mini-batch SGD with classical momentum and
//! weight decay on the total objective, a step learning-rate schedule, and
//! per-epoch validation.

pub mod eval;
pub mod gradcheck;

pub use eval::{evaluate, EvalReport};
pub use gradcheck::{gradcheck, GradCheckReport};

use crate::data::{
    clips_to_batch, crops::hflip, sample_clip, sample_segments, sampling, Dataset, Frames,
    SampleMode, SampleScheme,
};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Mode;
use crate::rng::SeedKey;
use serde::{Deserialize, Serialize};

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    1e-4
}

fn default_dropout() -> f64 {
    0.5
}

fn default_batch() -> usize {
    16
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epochs at which the learning rate divides by 10.
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub seed: u64,
    /// Horizontal-flip augmentation during training.
    #[serde(default)]
    pub hflip: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::config("train.lr", "learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("train.weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("train.dropout", "must lie in [0, 1)"));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("train.milestones", "must be strictly increasing"));
        }
        if let Some(&last) = self.milestones.last() {
            if last >= self.epochs {
                return Err(Error::config(
                    "train.milestones",
                    format!("milestone {last} not below epochs {}", self.epochs),
                ));
            }
        }
        Ok(())
    }

    /// Learning rate at `epoch`: lr / 10^(milestones passed).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * 10f64.powi(-(decays as i32))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_top1: Option<f64>,
}

/// Draws one training clip for (epoch, position-in-dataset), all randomness
/// keyed by stable coordinates.
fn draw_train_clip(
    video: &crate::data::VideoRecord,
    scheme: &SampleScheme,
    seed: u64,
    epoch: usize,
    index: usize,
    hflip_aug: bool,
) -> Result<Frames> {
    let key = SeedKey::new(seed).tag("sample").index(epoch as u64).index(index as u64);
    let mut clip = match scheme.mode {
        SampleMode::Windowed => {
            let mut rng = key.tag("start").rng();
            let start = sampling::random_start(video.frames.t, scheme.window, &mut rng)?;
            sample_clip(video, scheme, start)?
        }
        SampleMode::Segments => {
            let mut rng = key.tag("segments").rng();
            sample_segments(video, scheme.num_segments, Some(&mut rng))?
        }
    };
    if hflip_aug && key.tag("flip").rng().flip() {
        clip = hflip(&clip);
    }
    Ok(clip)
}

/// Runs epochs `start_epoch..cfg.epochs` of SGD. `on_epoch` fires after each
/// epoch with the fresh statistics (history persistence, logging).
pub fn train(
    model: &mut Model,
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
    scheme: &SampleScheme,
    cfg: &TrainConfig,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    scheme.validate()?;
    if train_ds.is_empty() {
        return Err(Error::Invalid("training dataset is empty".into()));
    }
    if train_ds.meta.num_classes != model.num_classes() {
        return Err(Error::config(
            "num_classes",
            format!(
                "model has {} classes, dataset {}",
                model.num_classes(),
                train_ds.meta.num_classes
            ),
        ));
    }

    let n = train_ds.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let mut history = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        SeedKey::new(cfg.seed).tag("shuffle").index(epoch as u64).rng().shuffle(&mut order);

        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut clips = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for (k, &vi) in chunk.iter().enumerate() {
                let video = &train_ds.records[vi];
                clips.push(draw_train_clip(
                    video,
                    scheme,
                    cfg.seed,
                    epoch,
                    bi * cfg.batch_size + k,
                    cfg.hflip,
                )?);
                labels.push(video.class_id);
            }
            let batch = clips_to_batch(&clips)?;
            let step = (epoch * batches_per_epoch + bi) as u64;
            let mode = Mode::Train { seed: cfg.seed, step, dropout: true };
            let (g, loss, bn_updates) = model.train_loss(&batch, &labels, mode)?;
            let loss_v = g.value(loss).item()?;
            if !loss_v.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged: loss {loss_v} at epoch {epoch}, batch {bi}, lr {lr}"
                )));
            }
            let pass = g.backward(loss)?;
            model.params.zero_grads();
            pass.accumulate_into(&g, &mut model.params);
            model.params.sgd_step(lr, cfg.momentum, cfg.weight_decay);
            model.apply_bn_updates(bn_updates);
            loss_sum += loss_v * chunk.len() as f64;
        }

        let val_top1 = match val_ds {
            Some(ds) => {
                Some(evaluate(model, ds, scheme, crate::data::CropProtocol::None, 1)?.top1)
            }
            None => None,
        };
        let stats = EpochStats { epoch, lr, train_loss: loss_sum / n as f64, val_top1 };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}
