//! Patch significance, baseline scorers and the patch-similarity diagnostic.

mod baselines;
mod significance;
mod similarity;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use baselines::{attn_norm_scores, random_scores};
pub use significance::{
    score_intermediates, significance_exact_oracle, significance_per_sample, significance_scores,
    ScoreIntermediates, TupleAggregation, EXACT_ORACLE_TUPLE_LIMIT,
};
pub use similarity::layer_similarity_profile;

use crate::error::Error;
use crate::numerics::Scalar;

/// Per-patch scores of one layer, averaged over `sample_count` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector<T: Scalar = f64> {
    /// 1-based layer index `t`.
    pub layer: usize,
    pub values: Vec<T>,
    pub sample_count: usize,
}

impl<T: Scalar> ScoreVector<T> {
    /// Patch indices by descending score; ties go to the lower index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| {
            self.values[b]
                .partial_cmp(&self.values[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }

    /// The `k` best patches in ranking order.
    pub fn top(&self, k: usize) -> Vec<usize> {
        let mut r = self.ranking();
        r.truncate(k);
        r
    }

    /// Rank (0 = best) of every patch.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.values.len()];
        for (rank, i) in self.ranking().into_iter().enumerate() {
            ranks[i] = rank;
        }
        ranks
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Significance,
    Random,
    AttnNorm,
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "significance" => Ok(Self::Significance),
            "random" => Ok(Self::Random),
            "attn_norm" | "attn-norm" | "attn" => Ok(Self::AttnNorm),
            other => Err(Error::Config(format!(
                "unknown scorer {other:?} (expected significance, random or attn_norm)"
            ))),
        }
    }
}

impl ScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Significance => "significance",
            Self::Random => "random",
            Self::AttnNorm => "attn_norm",
        }
    }
}
