//! Analytic multiply-accumulate accounting for transformer blocks.
//!
//! Two conventions are provided. [`block_cost`] is the reference formula: the
//! key/value projections and the attention keys always span all `N` patches,
//! and only query-side work shrinks with the kept count. [`gathered_block_cost`]
//! is what the gather execution path really performs, where keys and values are
//! restricted to the incoming kept rows. The two agree whenever `kept_in = N`.
//! Softmax, GeLU, layer norm and residual additions are not counted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::compact::compact_model_forward;
use crate::model::{MaskSchedule, ModelConfig, ModelParams};
use crate::numerics::{Matrix, Scalar};

/// Unit label written into every report.
pub const COST_UNIT: &str = "MAC";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCost {
    pub msa_macs: u64,
    pub mlp_macs: u64,
}

impl BlockCost {
    pub fn total(&self) -> u64 {
        self.msa_macs + self.mlp_macs
    }
}

fn check_counts(patches: usize, kept_in: usize, kept_out: usize) -> Result<()> {
    if kept_out == 0 || kept_out > kept_in || kept_in > patches {
        return Err(Error::Range(format!(
            "kept counts must satisfy 1 <= kept_out ({kept_out}) <= kept_in ({kept_in}) <= N ({patches})"
        )));
    }
    Ok(())
}

/// `msa = 2Nd² + k(2Nd + 2d²)`, `mlp = 2kdd'` with `k = kept_out`; this is
/// `(2N²d + 4Nd²) − η(2N²d + 2Nd²)` and `(1 − η)·2Ndd'` for `η = 1 − k/N`.
pub fn block_cost(
    patches: usize,
    dim: usize,
    hidden: usize,
    kept_in: usize,
    kept_out: usize,
) -> Result<BlockCost> {
    check_counts(patches, kept_in, kept_out)?;
    let (n, d, dh, k) = (patches as u64, dim as u64, hidden as u64, kept_out as u64);
    Ok(BlockCost {
        msa_macs: 2 * n * d * d + k * (2 * n * d + 2 * d * d),
        mlp_macs: 2 * k * d * dh,
    })
}

/// Count performed by gathered execution: queries and output projection on
/// `kept_out` rows, keys and values on `kept_in` rows, scores and context over
/// `kept_out × kept_in` pairs.
pub fn gathered_block_cost(
    patches: usize,
    dim: usize,
    hidden: usize,
    kept_in: usize,
    kept_out: usize,
) -> Result<BlockCost> {
    check_counts(patches, kept_in, kept_out)?;
    let (d, dh, ki, ko) = (dim as u64, hidden as u64, kept_in as u64, kept_out as u64);
    Ok(BlockCost {
        msa_macs: 2 * ko * d * d + 2 * ki * d * d + 2 * ko * ki * d,
        mlp_macs: 2 * ko * d * dh,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: usize,
    pub kept_in: usize,
    pub kept_out: usize,
    pub msa_macs: u64,
    pub mlp_macs: u64,
    /// Count under the gathered-execution convention.
    pub gathered_macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub unit: String,
    pub layers: Vec<LayerCost>,
    pub msa_macs: u64,
    pub mlp_macs: u64,
    pub total_macs: u64,
    pub baseline_msa_macs: u64,
    pub baseline_mlp_macs: u64,
    pub baseline_total_macs: u64,
    pub gathered_total_macs: u64,
    /// `(1 − total/baseline)·100`.
    pub reduction_percent: f64,
}

/// Sums [`block_cost`] over the blocks with `kept_in = |m_{l-1}|`, `kept_out = |m_l|`.
pub fn schedule_cost(config: &ModelConfig, schedule: &MaskSchedule) -> Result<CostReport> {
    config.validate()?;
    if schedule.layers() != config.layers {
        return Err(Error::InvalidMask(format!(
            "schedule has {} layers, model has {}",
            schedule.layers(),
            config.layers
        )));
    }
    schedule.validate(config.patches)?;
    let (n, d, dh) = (config.patches, config.dim, config.hidden_dim);
    let base = block_cost(n, d, dh, n, n)?;
    let mut layers = Vec::with_capacity(config.layers);
    for l in 1..=config.layers {
        let kept_in = schedule.mask(l - 1).count();
        let kept_out = schedule.mask(l).count();
        let c = block_cost(n, d, dh, kept_in, kept_out)?;
        let g = gathered_block_cost(n, d, dh, kept_in, kept_out)?;
        layers.push(LayerCost {
            layer: l,
            kept_in,
            kept_out,
            msa_macs: c.msa_macs,
            mlp_macs: c.mlp_macs,
            gathered_macs: g.total(),
        });
    }
    let msa_macs = layers.iter().map(|c| c.msa_macs).sum::<u64>();
    let mlp_macs = layers.iter().map(|c| c.mlp_macs).sum::<u64>();
    let total_macs = msa_macs + mlp_macs;
    let count = config.layers as u64;
    let baseline_total_macs = base.total() * count;
    Ok(CostReport {
        unit: COST_UNIT.to_string(),
        msa_macs,
        mlp_macs,
        total_macs,
        baseline_msa_macs: base.msa_macs * count,
        baseline_mlp_macs: base.mlp_macs * count,
        baseline_total_macs,
        gathered_total_macs: layers.iter().map(|c| c.gathered_macs).sum(),
        reduction_percent: (1.0 - total_macs as f64 / baseline_total_macs as f64) * 100.0,
        layers,
    })
}

/// Per-block multiply-accumulates actually executed by the gather path on one input.
pub fn instrumented_mac_count<T: Scalar>(
    params: &ModelParams<T>,
    schedule: &MaskSchedule,
    raw_tokens: &Matrix<T>,
) -> Result<Vec<u64>> {
    Ok(compact_model_forward(raw_tokens, params, Some(schedule))?
        .macs
        .per_layer)
}
