use super::ScoreVector;
use crate::error::{Error, Result};
use crate::model::ForwardTrace;
use crate::numerics::{Rng, Scalar};

/// Uniform `[0, 1)` draws.
pub fn random_scores<T: Scalar>(n: usize, seed: u64) -> ScoreVector<T> {
    let mut rng = Rng::new(seed);
    ScoreVector {
        layer: 0,
        values: (0..n).map(|_| T::lit(rng.uniform())).collect(),
        sample_count: 0,
    }
}

/// Attention received by each patch at layer `t`: `Σ_h ‖P_t^h[:,i]‖²`, averaged over traces.
pub fn attn_norm_scores<T: Scalar>(traces: &[ForwardTrace<T>], t: usize) -> Result<ScoreVector<T>> {
    let first = traces.first().ok_or(Error::Empty("score sample set"))?;
    if t == 0 || t > first.layers() {
        return Err(Error::Range(format!(
            "attention layer {t} must lie in 1..={}",
            first.layers()
        )));
    }
    let n = first.features[0].rows();
    let mut values = vec![T::zero(); n];
    for trace in traces {
        for p in &trace.attention[t - 1] {
            for r in 0..p.rows() {
                for (v, &x) in values.iter_mut().zip(p.row(r)) {
                    *v += x * x;
                }
            }
        }
    }
    let denom = T::from_usize_lossy(traces.len());
    values.iter_mut().for_each(|v| *v /= denom);
    Ok(ScoreVector {
        layer: t,
        values,
        sample_count: traces.len(),
    })
}
