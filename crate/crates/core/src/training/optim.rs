use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ModelParams;
use crate::numerics::{Matrix, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Rescales the whole gradient when its global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd { momentum: 0.9 },
            learning_rate: 0.05,
            clip_norm: Some(5.0),
        }
    }
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            learning_rate,
            clip_norm: Some(5.0),
        }
    }
}

/// Accumulators keyed by tensor name.
#[derive(Clone, Debug)]
pub struct OptimizerState<T: Scalar = f64> {
    pub config: OptimizerConfig,
    pub step: u64,
    first: BTreeMap<String, Matrix<T>>,
    second: BTreeMap<String, Matrix<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Updates every tensor whose name passes `select`.
    pub fn apply(
        &mut self,
        params: &mut ModelParams<T>,
        grads: &ModelParams<T>,
        select: &dyn Fn(&str) -> bool,
    ) -> Result<()> {
        self.step += 1;
        let grads = grads.tensors();
        let clip = match self.config.clip_norm {
            Some(limit) => {
                let norm = grads
                    .iter()
                    .filter(|(n, _)| select(n))
                    .map(|(_, g)| g.frobenius_sq().to_f64_lossy())
                    .sum::<f64>()
                    .sqrt();
                if norm > limit {
                    limit / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let lr = self.config.learning_rate;
        for ((name, p), (_, g)) in params.tensors_mut().into_iter().zip(grads) {
            if !select(&name) {
                continue;
            }
            match self.config.kind {
                OptimizerKind::Sgd { momentum } => {
                    let v = self
                        .first
                        .entry(name)
                        .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
                    for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                        *vv = T::lit(momentum) * *vv + gv * T::lit(clip);
                        *pv -= T::lit(lr) * *vv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = self
                        .first
                        .entry(name.clone())
                        .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
                    let v = self
                        .second
                        .entry(name)
                        .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
                    let c1 = 1.0 - beta1.powi(self.step as i32);
                    let c2 = 1.0 - beta2.powi(self.step as i32);
                    for (((pv, mv), vv), &gv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                        .zip(g.data())
                    {
                        let gv = gv * T::lit(clip);
                        *mv = T::lit(beta1) * *mv + T::lit(1.0 - beta1) * gv;
                        *vv = T::lit(beta2) * *vv + T::lit(1.0 - beta2) * gv * gv;
                        let mhat = *mv / T::lit(c1);
                        let vhat = *vv / T::lit(c2);
                        *pv -= T::lit(lr) * mhat / (vhat.sqrt() + T::lit(eps));
                    }
                }
            }
        }
        Ok(())
    }
}
