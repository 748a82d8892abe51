//! Finite-difference verification of the analytic gradients: central
//! differences of the full training objective against the tape's backward
//! pass, over every parameter coordinate or a seeded subsample.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Mode;
use crate::rng::SeedKey;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
    pub total_coords: usize,
}

/// Relative error with the denominator floored at 1e-8.
fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn loss_value(model: &Model, clips: &Tensor, labels: &[usize], mode: Mode) -> Result<f64> {
    let (g, loss, _) = model.train_loss(clips, labels, mode)?;
    g.value(loss).item()
}

/// Checks analytic gradients of the training loss on one batch. Uses the
/// batch-statistics normalization path with dropout disabled so the loss is
/// a deterministic, differentiable function of the parameters. When the
/// model has more than `max_coords` scalar parameters, a seeded subsample
/// of coordinates is checked instead of all of them.
pub fn gradcheck(
    model: &mut Model,
    clips: &Tensor,
    labels: &[usize],
    step: f64,
    max_coords: usize,
    subsample_seed: u64,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(Error::Invalid("finite-difference step must be positive".into()));
    }
    let mode = Mode::Train { seed: 0, step: 0, dropout: false };

    // analytic gradients
    let (g, loss, _) = model.train_loss(clips, labels, mode)?;
    if !g.value(loss).item()?.is_finite() {
        return Err(Error::Numeric("loss is not finite at the evaluation point".into()));
    }
    let pass = g.backward(loss)?;
    model.params.zero_grads();
    pass.accumulate_into(&g, &mut model.params);
    let param_ids: Vec<_> = model.params.ids().collect();
    for &pid in &param_ids {
        if !model.params.grad(pid).is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite analytic gradient in `{}`",
                model.params.name(pid)
            )));
        }
    }
    let analytic: Vec<Tensor> = param_ids.iter().map(|&p| model.params.grad(p).clone()).collect();

    // coordinate selection
    let sizes: Vec<usize> = param_ids.iter().map(|&p| model.params.value(p).numel()).collect();
    let total: usize = sizes.iter().sum();
    let coords: Vec<(usize, usize)> = if total <= max_coords {
        let mut all = Vec::with_capacity(total);
        for (pi, &n) in sizes.iter().enumerate() {
            for k in 0..n {
                all.push((pi, k));
            }
        }
        all
    } else {
        let mut rng = SeedKey::new(subsample_seed).tag("gradcheck").rng();
        let mut picked = std::collections::BTreeSet::new();
        while picked.len() < max_coords {
            let flat = rng.below(total);
            let mut rest = flat;
            let mut pi = 0;
            while rest >= sizes[pi] {
                rest -= sizes[pi];
                pi += 1;
            }
            picked.insert((pi, rest));
        }
        picked.into_iter().collect()
    };

    let mut worst = 0.0f64;
    let mut worst_param = String::new();
    let mut worst_index = 0usize;
    for &(pi, k) in &coords {
        let pid = param_ids[pi];
        let orig = model.params.value(pid).data()[k];
        model.params.value_mut(pid).data_mut()[k] = orig + step;
        let lp = loss_value(model, clips, labels, mode)?;
        model.params.value_mut(pid).data_mut()[k] = orig - step;
        let lm = loss_value(model, clips, labels, mode)?;
        model.params.value_mut(pid).data_mut()[k] = orig;
        if !lp.is_finite() || !lm.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite perturbed loss at `{}`[{k}]",
                model.params.name(pid)
            )));
        }
        let numeric = (lp - lm) / (2.0 * step);
        let err = rel_error(analytic[pi].data()[k], numeric);
        if err > worst {
            worst = err;
            worst_param = model.params.name(pid).to_string();
            worst_index = k;
        }
    }

    Ok(GradCheckReport {
        max_rel_error: worst,
        worst_param,
        worst_index,
        coords_checked: coords.len(),
        total_coords: total,
    })
}
