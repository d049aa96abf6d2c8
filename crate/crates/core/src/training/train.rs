use serde::{Deserialize, Serialize};

use super::gradients::{param_gradients, segment_gradients, segment_loss, LossSpec, SegmentData};
use super::optim::{OptimizerConfig, OptimizerState};
use super::Batch;
use crate::error::{Error, Result};
use crate::model::{model_forward, MaskSchedule, ModelConfig, ModelParams, PatchMask};
use crate::numerics::{Rng, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub samples: usize,
}

/// Accuracy and mean cross-entropy, optionally under a mask schedule.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    data: &Batch<T>,
    schedule: Option<&MaskSchedule>,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        let trace = model_forward(x, params, schedule)?;
        correct += usize::from(trace.predicted_class() == y);
        loss += cross_entropy(trace.logits.data(), y);
    }
    let n = data.len();
    Ok(Evaluation {
        accuracy: correct as f64 / n as f64,
        loss: loss / n as f64,
        samples: n,
    })
}

fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> f64 {
    let z: Vec<f64> = logits.iter().map(|x| x.to_f64_lossy()).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - z[label]
}

fn check_dataset<T: Scalar>(config: &ModelConfig, data: &Batch<T>) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let expected = (config.patches - 1, config.token_dim);
    if data.sample_shape() != Some(expected) {
        return Err(Error::Config(format!(
            "dataset samples are {:?}, model expects {expected:?}",
            data.sample_shape()
        )));
    }
    if data.num_classes != config.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model has {}",
            data.num_classes, config.num_classes
        )));
    }
    Ok(())
}

/// Shuffled minibatch cross-entropy training of every tensor accepted by `select`.
fn run_epochs<T: Scalar>(
    params: &mut ModelParams<T>,
    data: &Batch<T>,
    schedule: Option<&MaskSchedule>,
    options: &TrainOptions,
    rng: &mut Rng,
    log: &mut TrainLog,
) -> Result<()> {
    let mut opt = OptimizerState::new(options.optimizer);
    let batch_size = options.batch_size.max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..options.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (step, chunk) in order.chunks(batch_size).enumerate() {
            let batch = data.subset(chunk);
            let out = param_gradients(params, &batch, schedule, &LossSpec::CrossEntropy).map_err(
                |e| match e {
                    Error::Divergence { .. } => Error::Divergence { epoch, step },
                    other => other,
                },
            )?;
            loss_sum += out.loss.to_f64_lossy() * chunk.len() as f64;
            correct += out.correct;
            opt.apply(params, &out.grads, &|_| true)?;
            if !params.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
        }
        let entry = EpochLog {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} acc {:.4}",
            entry.loss,
            entry.accuracy
        );
        log.epochs.push(entry);
    }
    Ok(())
}

/// Trains a freshly initialized model. Deterministic for a given seed.
pub fn train_model<T: Scalar>(
    config: &ModelConfig,
    data: &Batch<T>,
    options: &TrainOptions,
    seed: u64,
) -> Result<(ModelParams<T>, TrainLog)> {
    config.validate()?;
    check_dataset(config, data)?;
    let rng = Rng::new(seed);
    let mut params = ModelParams::init(config, &mut rng.fork(0))?;
    let mut log = TrainLog {
        seed,
        epochs: Vec::new(),
    };
    run_epochs(&mut params, data, None, options, &mut rng.fork(1), &mut log)?;
    Ok((params, log))
}

/// Trains all parameters with the mask schedule active.
pub fn finetune_full<T: Scalar>(
    params: &ModelParams<T>,
    schedule: &MaskSchedule,
    data: &Batch<T>,
    options: &TrainOptions,
    seed: u64,
) -> Result<(ModelParams<T>, TrainLog)> {
    check_dataset(&params.config, data)?;
    schedule.validate(params.config.patches)?;
    let mut tuned = params.clone();
    let mut log = TrainLog {
        seed,
        epochs: Vec::new(),
    };
    run_epochs(
        &mut tuned,
        data,
        Some(schedule),
        options,
        &mut Rng::new(seed).fork(2),
        &mut log,
    )?;
    Ok((tuned, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockFinetuneOptions {
    /// Passes over the calibration set.
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for BlockFinetuneOptions {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 16,
            optimizer: OptimizerConfig::adam(1e-3),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockFinetuneOutcome<T: Scalar = f64> {
    pub params: ModelParams<T>,
    pub initial_error: T,
    pub final_error: T,
    /// The tuned weights were worse than the starting point and were discarded.
    pub reverted: bool,
}

/// Fits block `layer` so that blocks `layer` and `layer + 1`, fed the original
/// `Z_{layer-1}`, reproduce the original `Z_{layer+1}` on `mask_next` rows.
/// Only `layer.{layer}.*` tensors change.
pub fn finetune_block<T: Scalar>(
    layer: usize,
    params: &ModelParams<T>,
    mask: &PatchMask,
    mask_next: &PatchMask,
    calibration: &SegmentData<T>,
    normalizer: T,
    options: &BlockFinetuneOptions,
) -> Result<BlockFinetuneOutcome<T>> {
    let cfg = &params.config;
    if layer == 0 || layer >= cfg.layers {
        return Err(Error::Range(format!(
            "block fine-tune layer {layer} outside 1..{}",
            cfg.layers
        )));
    }
    let masks = [mask.clone(), mask_next.clone()];
    let initial_error = segment_loss(params, calibration, layer, &masks, normalizer)?;
    if options.epochs == 0 || initial_error == T::zero() {
        return Ok(BlockFinetuneOutcome {
            params: params.clone(),
            initial_error,
            final_error: initial_error,
            reverted: false,
        });
    }
    let prefix = format!("layer.{layer}.");
    let select = |name: &str| name.starts_with(&prefix);
    let mut tuned = params.clone();
    let mut opt = OptimizerState::new(options.optimizer);
    let indices: Vec<usize> = (0..calibration.inputs.len()).collect();
    for _ in 0..options.epochs {
        for chunk in indices.chunks(options.batch_size.max(1)) {
            let out = segment_gradients(&tuned, calibration, chunk, layer, &masks, normalizer)?;
            opt.apply(&mut tuned, &out.grads, &select)?;
        }
    }
    let final_error = segment_loss(&tuned, calibration, layer, &masks, normalizer)?;
    if !(final_error <= initial_error) {
        return Ok(BlockFinetuneOutcome {
            params: params.clone(),
            initial_error,
            final_error: initial_error,
            reverted: true,
        });
    }
    Ok(BlockFinetuneOutcome {
        params: tuned,
        initial_error,
        final_error,
        reverted: false,
    })
}
