use rayon::prelude::*;

use super::backprop::{cross_entropy_backward, embed_backward, masked_sq_error, segment_backward};
use super::Batch;
use crate::error::{Error, Result};
use crate::model::{forward_segment, model_forward_cached, MaskSchedule, ModelParams, PatchMask};
use crate::numerics::{Matrix, Scalar};

/// Objective differentiated by [`param_gradients`].
#[derive(Clone, Copy, Debug)]
pub enum LossSpec<'a, T: Scalar = f64> {
    /// Mean cross-entropy of the logits.
    CrossEntropy,
    /// Mean `‖diag(m_k)(Ẑ_k − Z_k)‖_F² / normalizer` against frozen per-sample targets `Z_k`.
    Reconstruction {
        layer: usize,
        targets: &'a [Matrix<T>],
        normalizer: T,
    },
}

/// Loss value, gradients and (for cross-entropy) the number of correct predictions.
#[derive(Clone, Debug)]
pub struct GradientOutput<T: Scalar = f64> {
    pub loss: T,
    pub grads: ModelParams<T>,
    pub correct: usize,
}

/// Exact reverse-mode gradients of `loss` w.r.t. every tensor of `params`.
///
/// Per-sample gradients are computed in parallel and summed in sample order,
/// so the result does not depend on the thread count.
pub fn param_gradients<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    schedule: Option<&MaskSchedule>,
    loss: &LossSpec<'_, T>,
) -> Result<GradientOutput<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch"));
    }
    let weight = T::one() / T::from_usize_lossy(batch.len());
    let per_sample: Vec<(T, ModelParams<T>, bool)> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            sample_gradient(
                params,
                &batch.inputs[i],
                batch.labels[i],
                i,
                schedule,
                loss,
                weight,
            )
        })
        .collect::<Result<_>>()?;
    reduce(params, per_sample)
}

fn reduce<T: Scalar>(
    params: &ModelParams<T>,
    per_sample: Vec<(T, ModelParams<T>, bool)>,
) -> Result<GradientOutput<T>> {
    let mut grads = params.zeros_like();
    let mut total = T::zero();
    let mut correct = 0;
    for (l, g, ok) in per_sample {
        total += l;
        grads.axpy(T::one(), &g)?;
        correct += usize::from(ok);
    }
    if !total.is_finite() {
        return Err(Error::Divergence { epoch: 0, step: 0 });
    }
    Ok(GradientOutput {
        loss: total,
        grads,
        correct,
    })
}

fn sample_gradient<T: Scalar>(
    params: &ModelParams<T>,
    raw: &Matrix<T>,
    label: usize,
    index: usize,
    schedule: Option<&MaskSchedule>,
    loss: &LossSpec<'_, T>,
    weight: T,
) -> Result<(T, ModelParams<T>, bool)> {
    let mut grads = params.zeros_like();
    match *loss {
        LossSpec::CrossEntropy => {
            let fwd = model_forward_cached(raw, params, schedule)?;
            let correct = crate::model::argmax(fwd.logits.data()) == label;
            let l = cross_entropy_backward(&fwd, label, weight, params, &mut grads)?;
            Ok((l, grads, correct))
        }
        LossSpec::Reconstruction {
            layer,
            targets,
            normalizer,
        } => {
            let cfg = &params.config;
            if layer == 0 || layer > cfg.layers {
                return Err(Error::Range(format!(
                    "reconstruction layer {layer} outside 1..={}",
                    cfg.layers
                )));
            }
            let full = MaskSchedule::all_ones(cfg.layers, cfg.patches);
            let schedule = schedule.unwrap_or(&full);
            let masks: Vec<PatchMask> = (1..=layer).map(|l| schedule.mask(l)).collect();
            let embedded = crate::model::embed_tokens(raw, params)?;
            let caches =
                forward_segment(&embedded, params, 1, &PatchMask::all(cfg.patches), &masks)?;
            let out = &caches.last().expect("layer >= 1").output;
            let (l, d_out) = masked_sq_error(
                out,
                &targets[index],
                masks[layer - 1].bits(),
                weight / normalizer,
            )?;
            let d_embedded = segment_backward(&caches, params, d_out, &mut grads)?;
            embed_backward(raw, &d_embedded, &mut grads)?;
            Ok((l, grads, false))
        }
    }
}

/// Frozen inputs and targets for fitting a run of consecutive blocks.
#[derive(Clone, Debug)]
pub struct SegmentData<T: Scalar = f64> {
    /// Features entering block `first` (`Z_{first-1}`), one per sample.
    pub inputs: Vec<Matrix<T>>,
    /// Features expected after the last block, one per sample.
    pub targets: Vec<Matrix<T>>,
}

/// Mean `‖diag(m_last)(Ẑ − Z)‖² / normalizer` through blocks `first..first+masks.len()`,
/// starting from unmasked inputs.
pub fn segment_loss<T: Scalar>(
    params: &ModelParams<T>,
    data: &SegmentData<T>,
    first: usize,
    masks: &[PatchMask],
    normalizer: T,
) -> Result<T> {
    if data.inputs.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let all = PatchMask::all(params.config.patches);
    let last = masks.last().expect("non-empty segment");
    let mut total = T::zero();
    for (x, z) in data.inputs.iter().zip(&data.targets) {
        let caches = forward_segment(x, params, first, &all, masks)?;
        let mut diff = caches.last().expect("non-empty").output.sub(z)?;
        diff.mask_rows(last.bits());
        total += diff.frobenius_sq();
    }
    Ok(total / (T::from_usize_lossy(data.inputs.len()) * normalizer))
}

/// Gradient of [`segment_loss`] restricted to `indices` of the segment data.
pub fn segment_gradients<T: Scalar>(
    params: &ModelParams<T>,
    data: &SegmentData<T>,
    indices: &[usize],
    first: usize,
    masks: &[PatchMask],
    normalizer: T,
) -> Result<GradientOutput<T>> {
    if indices.is_empty() {
        return Err(Error::Empty("segment batch"));
    }
    let weight = T::one() / (T::from_usize_lossy(indices.len()) * normalizer);
    let all = PatchMask::all(params.config.patches);
    let last = masks.last().expect("non-empty segment");
    let per_sample: Vec<(T, ModelParams<T>, bool)> = indices
        .par_iter()
        .map(|&i| {
            let mut grads = params.zeros_like();
            let caches = forward_segment(&data.inputs[i], params, first, &all, masks)?;
            let out = &caches.last().expect("non-empty").output;
            let (l, d_out) = masked_sq_error(out, &data.targets[i], last.bits(), weight)?;
            segment_backward(&caches, params, d_out, &mut grads)?;
            Ok((l, grads, false))
        })
        .collect::<Result<_>>()?;
    reduce(params, per_sample)
}
