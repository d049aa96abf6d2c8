//! Top-down patch-mask search under a reconstruction-error budget, plus the
//! uniform baseline.
//!
//! Masks are built from the last block to the first. The last mask keeps only
//! the class token; each shallower mask starts from the deeper one and grows by
//! the best-scoring patches until the error two blocks downstream, measured
//! against the unpruned model, falls within budget.

use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::schedule_cost;
use crate::error::{Error, Result};
use crate::model::{
    model_forward, ForwardTrace, MaskSchedule, ModelConfig, ModelParams, PatchMask,
};
use crate::numerics::{Matrix, Rng, Scalar};
use crate::scoring::{
    attn_norm_scores, random_scores, significance_scores, ScoreVector, ScorerKind,
};
use crate::training::{finetune_block, Batch, BlockFinetuneOptions, SegmentData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrunerConfig {
    /// Tolerable error per layer; relative when `normalize_error` is set.
    pub epsilon: f64,
    /// Patches added per search step.
    pub granularity: usize,
    /// Block fine-tune run after every search step; zero epochs disables it.
    pub block_finetune: BlockFinetuneOptions,
    pub calibration_size: usize,
    pub scorer: ScorerKind,
    pub normalize_error: bool,
    pub seed: u64,
}

impl PrunerConfig {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            granularity: 10,
            block_finetune: BlockFinetuneOptions::default(),
            calibration_size: 256,
            scorer: ScorerKind::Significance,
            normalize_error: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.granularity == 0 {
            return Err(Error::Config("granularity must be at least 1".into()));
        }
        if self.calibration_size == 0 {
            return Err(Error::Config("calibration size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub kept: usize,
    /// Error after block `layer + 1` at exit; the last block reports the error of its own output.
    pub error: f64,
    /// `error <= epsilon` on exit. When false the mask saturated at all patches.
    pub budget_met: bool,
    /// Search iterations, the zero-patch step included.
    pub steps: usize,
    pub finetune_reverted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub epsilon: f64,
    pub granularity: usize,
    pub scorer: ScorerKind,
    pub calibration_size: usize,
    pub kept_counts: Vec<usize>,
    pub layers: Vec<LayerReport>,
    pub macs_before: u64,
    pub macs_after: u64,
    pub reduction_percent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PruneOutcome<T: Scalar = f64> {
    pub schedule: MaskSchedule,
    pub report: PruneReport,
    /// Weights after the block fine-tunes.
    pub params: ModelParams<T>,
}

/// Mean `‖diag(m)(Ẑ_k − Z_k)‖²` over paired traces, divided by the mean
/// `‖diag(m)Z_k‖²` when `normalize` is set. A zero reference norm falls back to the raw error.
pub fn reconstruction_error<T: Scalar>(
    original: &[ForwardTrace<T>],
    pruned: &[ForwardTrace<T>],
    mask: &PatchMask,
    k: usize,
    normalize: bool,
) -> Result<T> {
    if original.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    if original.len() != pruned.len() {
        return Err(Error::Config(format!(
            "{} original traces but {} pruned traces",
            original.len(),
            pruned.len()
        )));
    }
    let mut err = T::zero();
    let mut reference = T::zero();
    for (o, p) in original.iter().zip(pruned) {
        let (z, zh) = (o.features.get(k), p.features.get(k));
        let (z, zh) = z
            .zip(zh)
            .ok_or_else(|| Error::Range(format!("layer {k} outside the traces")))?;
        let mut diff = zh.sub(z)?;
        diff.mask_rows(mask.bits());
        err += diff.frobenius_sq();
        let mut zm = z.clone();
        zm.mask_rows(mask.bits());
        reference += zm.frobenius_sq();
    }
    Ok(finish_error(err, reference, original.len(), normalize))
}

fn finish_error<T: Scalar>(err: T, reference: T, count: usize, normalize: bool) -> T {
    let n = T::from_usize_lossy(count);
    if normalize && reference > T::zero() {
        err / reference
    } else {
        err / n
    }
}

/// Mean squared norm of the kept rows, used to turn raw errors into relative ones.
fn mean_masked_norm<T: Scalar>(features: &[&Matrix<T>], mask: &PatchMask) -> T {
    let mut total = T::zero();
    for z in features {
        let mut zm = (*z).clone();
        zm.mask_rows(mask.bits());
        total += zm.frobenius_sq();
    }
    total / T::from_usize_lossy(features.len().max(1))
}

/// Result of the per-layer search.
#[derive(Clone, Debug)]
pub struct LayerSelection<T: Scalar = f64> {
    pub mask: PatchMask,
    pub params: ModelParams<T>,
    pub error: T,
    pub budget_met: bool,
    pub steps: usize,
    pub reverted: bool,
}

/// Grows `m_l` from `deeper` by the top-`r` patches of `scores` for `r = 0, r', 2r', …`,
/// fine-tuning block `l` at every step, until the downstream error is within budget
/// or every patch is kept. `segment` pairs original `Z_{l-1}` with original `Z_{l+1}`.
pub fn select_layer_mask<T: Scalar>(
    l: usize,
    params: &ModelParams<T>,
    deeper: &PatchMask,
    scores: &ScoreVector<T>,
    segment: &SegmentData<T>,
    normalizer: T,
    config: &PrunerConfig,
) -> Result<LayerSelection<T>> {
    let n = params.config.patches;
    if scores.values.len() != n || deeper.len() != n {
        return Err(Error::dim(
            "layer mask selection",
            (n, 1),
            (scores.values.len(), deeper.len()),
        ));
    }
    let ranking = scores.ranking();
    let epsilon = T::lit(config.epsilon);
    let mut r = 0;
    let mut steps = 0;
    let mut last: Option<LayerSelection<T>> = None;
    loop {
        let mask = deeper.union(&PatchMask::from_indices(n, &ranking[..r.min(n)]));
        steps += 1;
        let reuse = last.as_ref().is_some_and(|prev| prev.mask == mask);
        let selection = if reuse {
            last.take().expect("checked above")
        } else {
            let outcome = finetune_block(
                l,
                params,
                &mask,
                deeper,
                segment,
                normalizer,
                &config.block_finetune,
            )?;
            LayerSelection {
                mask,
                params: outcome.params,
                error: outcome.final_error,
                budget_met: false,
                steps: 0,
                reverted: outcome.reverted,
            }
        };
        debug!(
            "layer {l} step {steps}: kept {} error {}",
            selection.mask.count(),
            selection.error
        );
        let met = selection.error <= epsilon;
        if met || selection.mask.is_all() {
            return Ok(LayerSelection {
                budget_met: met,
                steps,
                ..selection
            });
        }
        last = Some(selection);
        r += config.granularity;
    }
}

fn layer_scores<T: Scalar>(
    scorer: ScorerKind,
    traces: &[ForwardTrace<T>],
    deeper: &[PatchMask],
    t: usize,
    seed: u64,
) -> Result<ScoreVector<T>> {
    match scorer {
        ScorerKind::Significance => significance_scores(traces, deeper, t),
        ScorerKind::AttnNorm => attn_norm_scores(traces, t),
        ScorerKind::Random => {
            let n = traces
                .first()
                .ok_or(Error::Empty("score sample set"))?
                .features[0]
                .rows();
            let mut s = random_scores(n, seed.wrapping_add(t as u64));
            s.layer = t;
            Ok(s)
        }
    }
}

fn forward_all<T: Scalar>(
    params: &ModelParams<T>,
    data: &Batch<T>,
    schedule: Option<&MaskSchedule>,
) -> Result<Vec<ForwardTrace<T>>> {
    data.inputs
        .par_iter()
        .map(|x| model_forward(x, params, schedule))
        .collect()
}

/// Masks `[all; t]` followed by `deeper`.
fn partial_schedule(n: usize, t: usize, deeper: &[PatchMask]) -> Result<MaskSchedule> {
    let mut masks = vec![PatchMask::all(n); t];
    masks.extend_from_slice(deeper);
    MaskSchedule::new(masks, n)
}

/// Runs the full top-down search on a calibration subset of `data`.
pub fn prune_topdown<T: Scalar>(
    params: &ModelParams<T>,
    data: &Batch<T>,
    config: &PrunerConfig,
) -> Result<PruneOutcome<T>> {
    config.validate()?;
    params.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("pruning data"));
    }
    let started = Instant::now();
    let cfg = params.config.clone();
    let (n, layers) = (cfg.patches, cfg.layers);
    let mut rng = Rng::new(config.seed);
    let calibration = data.sample(config.calibration_size, &mut rng);
    let original = forward_all(params, &calibration, None)?;

    let mut current = params.clone();
    // deeper[k] is the mask of layer layers - deeper.len() + 1 + k.
    let mut deeper = vec![PatchMask::class_only(n)];
    let top_error = {
        let schedule = partial_schedule(n, layers - 1, &deeper)?;
        let pruned = forward_all(&current, &calibration, Some(&schedule))?;
        reconstruction_error(
            &original,
            &pruned,
            &deeper[0],
            layers,
            config.normalize_error,
        )?
    };
    let mut reports = vec![LayerReport {
        layer: layers,
        kept: 1,
        error: top_error.to_f64_lossy(),
        budget_met: top_error <= T::lit(config.epsilon),
        steps: 0,
        finetune_reverted: false,
    }];

    for l in (1..layers).rev() {
        let schedule = partial_schedule(n, l, &deeper)?;
        let traces = forward_all(&current, &calibration, Some(&schedule))?;
        let scores = layer_scores(config.scorer, &traces, &deeper, l, config.seed)?;
        let segment = SegmentData {
            inputs: original.iter().map(|t| t.features[l - 1].clone()).collect(),
            targets: original.iter().map(|t| t.features[l + 1].clone()).collect(),
        };
        let next = deeper[0].clone();
        let normalizer = if config.normalize_error {
            let refs: Vec<&Matrix<T>> = segment.targets.iter().collect();
            let norm = mean_masked_norm(&refs, &next);
            if norm > T::zero() {
                norm
            } else {
                T::one()
            }
        } else {
            T::one()
        };
        let choice = select_layer_mask(l, &current, &next, &scores, &segment, normalizer, config)?;
        info!(
            "layer {l}: kept {}/{n} after {} steps, error {:.3e}{}",
            choice.mask.count(),
            choice.steps,
            choice.error.to_f64_lossy(),
            if choice.budget_met {
                ""
            } else {
                " (budget not met)"
            }
        );
        reports.push(LayerReport {
            layer: l,
            kept: choice.mask.count(),
            error: choice.error.to_f64_lossy(),
            budget_met: choice.budget_met,
            steps: choice.steps,
            finetune_reverted: choice.reverted,
        });
        current = choice.params;
        deeper.insert(0, choice.mask);
    }
    reports.reverse();
    let schedule = MaskSchedule::new(deeper, n)?;
    let before = schedule_cost(&cfg, &MaskSchedule::all_ones(layers, n))?;
    let after = schedule_cost(&cfg, &schedule)?;
    let report = PruneReport {
        epsilon: config.epsilon,
        granularity: config.granularity,
        scorer: config.scorer,
        calibration_size: calibration.len(),
        kept_counts: schedule.kept_counts(),
        layers: reports,
        macs_before: before.total_macs,
        macs_after: after.total_macs,
        reduction_percent: after.reduction_percent,
        wall_time_seconds: Some(started.elapsed().as_secs_f64()),
    };
    Ok(PruneOutcome {
        schedule,
        report,
        params: current,
    })
}

/// Smallest per-layer keep count whose uniform schedule costs at least `target_macs`.
pub fn uniform_keep_for_cost(config: &ModelConfig, target_macs: u64) -> Result<usize> {
    for keep in 1..=config.patches {
        let mut mask = PatchMask::none(config.patches);
        (0..keep).for_each(|i| mask.set(i, true));
        let cost = schedule_cost(
            config,
            &MaskSchedule::new(vec![mask; config.layers], config.patches)?,
        )?;
        if cost.total_macs >= target_macs {
            return Ok(keep);
        }
    }
    Ok(config.patches)
}

/// Uniform baseline keeping `keep` patches in every layer. Equal counts under
/// nesting force one shared patch set: the class token plus the best `keep − 1`
/// patches by the scorer at layer 1 of the unpruned model, with the last mask
/// reduced to the class token while scoring.
pub fn uniform_schedule_with_keep<T: Scalar>(
    params: &ModelParams<T>,
    calibration: &Batch<T>,
    keep: usize,
    scorer: ScorerKind,
    seed: u64,
) -> Result<MaskSchedule> {
    single_layer_schedule(params, calibration, 1, keep, scorer, seed)
}

/// Prunes from layer `layer` on: earlier layers keep every patch, layer
/// `layer` and all deeper layers keep the class token plus the best `keep − 1`
/// patches by the scorer. Scores are taken with the deeper layers unpruned
/// except the last, which is reduced to the class token.
pub fn single_layer_schedule<T: Scalar>(
    params: &ModelParams<T>,
    calibration: &Batch<T>,
    layer: usize,
    keep: usize,
    scorer: ScorerKind,
    seed: u64,
) -> Result<MaskSchedule> {
    let cfg = &params.config;
    let (n, layers) = (cfg.patches, cfg.layers);
    if layer == 0 || layer > layers {
        return Err(Error::Range(format!("layer {layer} outside 1..={layers}")));
    }
    if keep == 0 || keep > n {
        return Err(Error::Range(format!("keep count {keep} outside 1..={n}")));
    }
    let with_shared = |mask: PatchMask| {
        let mut masks = vec![PatchMask::all(n); layer - 1];
        masks.extend(vec![mask; layers - layer + 1]);
        MaskSchedule::new(masks, n)
    };
    if keep == n {
        return Ok(MaskSchedule::all_ones(layers, n));
    }
    if keep == 1 {
        return with_shared(PatchMask::class_only(n));
    }
    if calibration.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let scores = if layer == layers {
        let traces = forward_all(params, calibration, None)?;
        layer_scores(scorer, &traces, &[], layer, seed)
            .or_else(|_| attn_norm_scores(&traces, layer))?
    } else {
        let mut deeper = vec![PatchMask::all(n); layers - layer];
        *deeper.last_mut().expect("layer < layers") = PatchMask::class_only(n);
        let traces = forward_all(
            params,
            calibration,
            Some(&partial_schedule(n, layer, &deeper)?),
        )?;
        layer_scores(scorer, &traces, &deeper, layer, seed)?
    };
    let chosen: Vec<usize> = scores
        .ranking()
        .into_iter()
        .filter(|&i| i != 0)
        .take(keep - 1)
        .collect();
    with_shared(PatchMask::class_only(n).union(&PatchMask::from_indices(n, &chosen)))
}

/// Uniform baseline at pruning `rate`: every layer keeps `⌈(1 − rate)·N⌉` patches.
pub fn uniform_mask_schedule<T: Scalar>(
    params: &ModelParams<T>,
    calibration: &Batch<T>,
    rate: f64,
    scorer: ScorerKind,
    seed: u64,
) -> Result<MaskSchedule> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Range(format!("pruning rate {rate} outside (0, 1)")));
    }
    let n = params.config.patches;
    let keep = (((1.0 - rate) * n as f64).ceil() as usize).clamp(1, n);
    uniform_schedule_with_keep(params, calibration, keep, scorer, seed)
}
