use super::ScoreVector;
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, PatchMask};
use crate::numerics::{Matrix, Scalar};

/// Largest number of deep head tuples [`significance_exact_oracle`] will enumerate.
pub const EXACT_ORACLE_TUPLE_LIMIT: u128 = 4096;

/// Collapsed propagator and per-head local terms for one input.
#[derive(Clone, Debug)]
pub struct ScoreIntermediates<T: Scalar = f64> {
    /// `A_t = Π_{l=t+1..L} diag(m_l)·Σ_h P_l^h`, ordered from layer `L` (left) to `t+1` (right).
    pub propagator: Matrix<T>,
    /// `U_t^h = P_t^h·|Z_{t-1}|`, one per head.
    pub local: Vec<Matrix<T>>,
}

fn check_args<T: Scalar>(trace: &ForwardTrace<T>, deeper: &[PatchMask], t: usize) -> Result<()> {
    let layers = trace.layers();
    if t == 0 || t >= layers {
        return Err(Error::Range(format!(
            "score layer {t} must lie in 1..{layers}"
        )));
    }
    if deeper.len() != layers - t {
        return Err(Error::Config(format!(
            "expected {} deeper masks for layer {t} of {layers}, got {}",
            layers - t,
            deeper.len()
        )));
    }
    Ok(())
}

fn masked<T: Scalar>(p: &Matrix<T>, mask: &PatchMask) -> Matrix<T> {
    let mut m = p.clone();
    m.mask_rows(mask.bits());
    m
}

fn masked_head_sum<T: Scalar>(
    trace: &ForwardTrace<T>,
    l: usize,
    mask: &PatchMask,
) -> Result<Matrix<T>> {
    let maps = &trace.attention[l - 1];
    let mut sum = maps[0].clone();
    for p in &maps[1..] {
        sum.add_assign(p)?;
    }
    sum.mask_rows(mask.bits());
    Ok(sum)
}

/// `deeper[k]` is the mask of layer `t + 1 + k`.
pub fn score_intermediates<T: Scalar>(
    trace: &ForwardTrace<T>,
    deeper: &[PatchMask],
    t: usize,
) -> Result<ScoreIntermediates<T>> {
    check_args(trace, deeper, t)?;
    let layers = trace.layers();
    let mut propagator = masked_head_sum(trace, layers, &deeper[layers - t - 1])?;
    for l in (t + 1..layers).rev() {
        propagator = propagator.matmul(&masked_head_sum(trace, l, &deeper[l - t - 1])?)?;
    }
    let abs_input = trace.features[t - 1].abs();
    let local = trace.attention[t - 1]
        .iter()
        .map(|p| p.matmul(&abs_input))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreIntermediates { propagator, local })
}

/// Per-input significance `s_{t,i} = Σ_h ‖A_t[:,i]‖²·‖U_t^h[i,:]‖²`, using `‖a bᵀ‖_F² = ‖a‖²‖b‖²`.
pub fn significance_per_sample<T: Scalar>(
    trace: &ForwardTrace<T>,
    deeper: &[PatchMask],
    t: usize,
) -> Result<Vec<T>> {
    let parts = score_intermediates(trace, deeper, t)?;
    let n = parts.propagator.cols();
    let mut col_sq = vec![T::zero(); n];
    for r in 0..parts.propagator.rows() {
        for (c, &a) in parts.propagator.row(r).iter().enumerate() {
            col_sq[c] += a * a;
        }
    }
    let mut scores = vec![T::zero(); n];
    for u in &parts.local {
        for (i, s) in scores.iter_mut().enumerate() {
            let row_sq: T = u.row(i).iter().map(|&x| x * x).sum();
            *s += col_sq[i] * row_sq;
        }
    }
    Ok(scores)
}

fn average<T: Scalar>(per_sample: Vec<Vec<T>>, t: usize) -> ScoreVector<T> {
    let count = per_sample.len();
    let n = per_sample[0].len();
    let mut values = vec![T::zero(); n];
    for s in &per_sample {
        for (v, &x) in values.iter_mut().zip(s) {
            *v += x;
        }
    }
    let denom = T::from_usize_lossy(count);
    values.iter_mut().for_each(|v| *v /= denom);
    ScoreVector {
        layer: t,
        values,
        sample_count: count,
    }
}

/// Mean significance of layer-`t` patches over `traces`, given the fixed masks of layers `t+1..L`.
/// Heads of each deeper layer are summed inside the propagator.
pub fn significance_scores<T: Scalar>(
    traces: &[ForwardTrace<T>],
    deeper: &[PatchMask],
    t: usize,
) -> Result<ScoreVector<T>> {
    if traces.is_empty() {
        return Err(Error::Empty("score sample set"));
    }
    let per_sample = traces
        .iter()
        .map(|tr| significance_per_sample(tr, deeper, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(average(per_sample, t))
}

/// How [`significance_exact_oracle`] combines the deep head tuples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TupleAggregation {
    /// Squared norms are taken per tuple and summed.
    Literal,
    /// Tuple products are summed into one propagator first, then the norm is taken once.
    Collapsed,
}

/// Brute-force enumeration of every deep head tuple `(h_{t+1}, …, h_L)`. Each tuple's
/// propagator is the literal product of the individual masked maps; every local head
/// contributes `‖A[:,i]‖²·‖U^h[i,:]‖²`.
pub fn significance_exact_oracle<T: Scalar>(
    traces: &[ForwardTrace<T>],
    deeper: &[PatchMask],
    t: usize,
    aggregation: TupleAggregation,
) -> Result<ScoreVector<T>> {
    let first = traces.first().ok_or(Error::Empty("score sample set"))?;
    check_args(first, deeper, t)?;
    let layers = first.layers();
    let heads = first.attention[0].len();
    let depth = layers - t;
    let tuples = (heads as u128)
        .checked_pow(depth as u32)
        .unwrap_or(u128::MAX);
    if tuples > EXACT_ORACLE_TUPLE_LIMIT {
        return Err(Error::GuardExceeded {
            tuples,
            limit: EXACT_ORACLE_TUPLE_LIMIT,
        });
    }
    let mut per_sample = Vec::with_capacity(traces.len());
    for trace in traces {
        check_args(trace, deeper, t)?;
        let n = trace.features[0].rows();
        let abs_input = trace.features[t - 1].abs();
        let local: Vec<Matrix<T>> = trace.attention[t - 1]
            .iter()
            .map(|p| p.matmul(&abs_input))
            .collect::<Result<_>>()?;
        let norm_products = |a: &Matrix<T>, scores: &mut [T]| {
            for (i, s) in scores.iter_mut().enumerate() {
                let mut col = T::zero();
                for r in 0..n {
                    col += a.get(r, i) * a.get(r, i);
                }
                for u in &local {
                    let mut row = T::zero();
                    for c in 0..u.cols() {
                        row += u.get(i, c) * u.get(i, c);
                    }
                    *s += col * row;
                }
            }
        };
        let mut scores = vec![T::zero(); n];
        let mut collapsed = Matrix::zeros(n, n);
        let mut digits = vec![0usize; depth];
        for _ in 0..tuples {
            // digits[k] selects the head of layer t + 1 + k.
            let mut a = masked(
                &trace.attention[layers - 1][digits[depth - 1]],
                &deeper[depth - 1],
            );
            for k in (0..depth - 1).rev() {
                let l = t + 1 + k;
                a = a.matmul(&masked(&trace.attention[l - 1][digits[k]], &deeper[k]))?;
            }
            match aggregation {
                TupleAggregation::Literal => norm_products(&a, &mut scores),
                TupleAggregation::Collapsed => collapsed.add_assign(&a)?,
            }
            for d in digits.iter_mut() {
                *d += 1;
                if *d < heads {
                    break;
                }
                *d = 0;
            }
        }
        if aggregation == TupleAggregation::Collapsed {
            norm_products(&collapsed, &mut scores);
        }
        per_sample.push(scores);
    }
    Ok(average(per_sample, t))
}
