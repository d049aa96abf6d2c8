//! Per-input patch selection driven by small learned score predictors.
//!
//! Each predictor mean-pools groups of `g` embedding dimensions of a patch row,
//! applies a linear map with bias and a softplus, and is fitted to the
//! log-compressed per-input significance of that layer.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    embed_tokens, model_forward, pruned_block_forward, ForwardTrace, MaskSchedule, ModelParams,
    PatchMask,
};
use crate::numerics::{Matrix, Rng, Scalar};
use crate::scoring::significance_per_sample;
use crate::training::Batch;

/// Activation name recorded in predictor files.
pub const PREDICTOR_ACTIVATION: &str = "softplus";

/// Default pooling group: `max(d / 16, 1)`.
pub fn default_group(dim: usize) -> usize {
    (dim / 16).max(1)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Score predictor for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor<T: Scalar = f64> {
    pub group: usize,
    /// `(d / g) × 1`
    pub weights: Matrix<T>,
    pub bias: T,
}

impl<T: Scalar> Predictor<T> {
    pub fn zeros(dim: usize, group: usize) -> Result<Self> {
        if group == 0 || dim % group != 0 {
            return Err(Error::Config(format!(
                "embedding width {dim} is not divisible by pooling group {group}"
            )));
        }
        Ok(Self {
            group,
            weights: Matrix::zeros(dim / group, 1),
            bias: T::zero(),
        })
    }

    pub fn pooled_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Group means of one patch row.
    fn pool(&self, row: &[T]) -> Vec<T> {
        let g = T::from_usize_lossy(self.group);
        row.chunks(self.group)
            .map(|c| c.iter().copied().sum::<T>() / g)
            .collect()
    }

    fn check(&self, z: &Matrix<T>) -> Result<()> {
        if z.cols() != self.pooled_dim() * self.group {
            return Err(Error::dim(
                "predictor input",
                z.shape(),
                (self.pooled_dim() * self.group, 1),
            ));
        }
        Ok(())
    }
}

/// Predicted score for every row of `Z_{l-1}`.
pub fn predictor_forward<T: Scalar>(
    z_prev: &Matrix<T>,
    predictor: &Predictor<T>,
) -> Result<Vec<T>> {
    predictor.check(z_prev)?;
    Ok((0..z_prev.rows())
        .map(|r| {
            let pooled = predictor.pool(z_prev.row(r));
            let a: T = pooled
                .iter()
                .zip(predictor.weights.data())
                .map(|(&x, &w)| x * w)
                .sum::<T>()
                + predictor.bias;
            T::lit(softplus(a.to_f64_lossy()))
        })
        .collect())
}

/// Predictors for layers `1..L-1`; index `l - 1` serves layer `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorSet<T: Scalar = f64> {
    pub dim: usize,
    pub predictors: Vec<Predictor<T>>,
}

impl<T: Scalar> PredictorSet<T> {
    /// Small random weights, zero bias.
    pub fn init(layers: usize, dim: usize, group: usize, rng: &mut Rng) -> Result<Self> {
        let predictors = (1..layers.max(1))
            .map(|_| {
                let mut p = Predictor::zeros(dim, group)?;
                let scale = 0.01 / (p.pooled_dim() as f64).sqrt();
                p.weights = Matrix::from_fn(p.pooled_dim(), 1, |_, _| T::lit(scale * rng.normal()));
                Ok(p)
            })
            .collect::<Result<_>>()?;
        Ok(Self { dim, predictors })
    }

    /// `pred.{l}.W` and `pred.{l}.b` tensors.
    pub fn tensors(&self) -> Vec<(String, Matrix<T>)> {
        let mut out = Vec::new();
        for (i, p) in self.predictors.iter().enumerate() {
            out.push((format!("pred.{}.W", i + 1), p.weights.clone()));
            out.push((format!("pred.{}.b", i + 1), Matrix::filled(1, 1, p.bias)));
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> PredictorSet<U> {
        PredictorSet {
            dim: self.dim,
            predictors: self
                .predictors
                .iter()
                .map(|p| Predictor {
                    group: p.group,
                    weights: p.weights.cast(),
                    bias: U::lit(p.bias.to_f64_lossy()),
                })
                .collect(),
        }
    }
}

/// How per-input significance is turned into a regression target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    /// `log1p(s)`
    Log1p,
    /// `s / mean_i(s)` over the non-class patches of the same input.
    MeanNormalized,
    /// `log1p(s / mean_i(s))`
    Log1pMeanNormalized,
    /// Rank of `s` among the non-class patches of the same input, scaled to `[0, 1]`;
    /// ties share their average rank.
    Rank,
}

impl TargetTransform {
    fn apply<T: Scalar>(self, s: &[T]) -> Vec<T> {
        if self == Self::Rank {
            let rest: Vec<f64> = s[1..].iter().map(|v| v.to_f64_lossy()).collect();
            let top = (rest.len().max(2) - 1) as f64;
            let ranks = average_ranks(&rest);
            return std::iter::once(T::one())
                .chain(ranks.into_iter().map(|r| T::lit(r / top)))
                .collect();
        }
        let mean =
            s[1..].iter().map(|v| v.to_f64_lossy()).sum::<f64>() / (s.len() - 1).max(1) as f64;
        let scale = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        s.iter()
            .map(|v| {
                let v = v.to_f64_lossy();
                T::lit(match self {
                    Self::Log1p => v.ln_1p(),
                    Self::MeanNormalized => v * scale,
                    Self::Log1pMeanNormalized => (v * scale).ln_1p(),
                    Self::Rank => unreachable!("handled above"),
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorTrainOptions {
    pub epochs: usize,
    /// Inputs per update.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Training inputs drawn from the dataset.
    pub samples: usize,
    /// Pooling group; `None` means [`default_group`].
    pub group: Option<usize>,
    pub target: TargetTransform,
}

impl Default for PredictorTrainOptions {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            learning_rate: 0.01,
            samples: 1024,
            group: None,
            target: TargetTransform::Rank,
        }
    }
}

/// Per-input regression data for one layer: the rows of `Z_{l-1}` and the transformed `s_l`.
#[derive(Clone, Debug)]
pub struct PredictorTargets<T: Scalar = f64> {
    pub inputs: Vec<Matrix<T>>,
    pub targets: Vec<Vec<T>>,
}

fn partial_schedule(n: usize, t: usize, deeper: &[PatchMask]) -> Result<MaskSchedule> {
    let mut masks = vec![PatchMask::all(n); t];
    masks.extend_from_slice(deeper);
    MaskSchedule::new(masks, n)
}

/// Per-input significance at every layer `1..L-1`, with the schedule's deeper
/// masks applied and all shallower layers unpruned.
pub fn per_instance_targets<T: Scalar>(
    params: &ModelParams<T>,
    schedule: &MaskSchedule,
    data: &Batch<T>,
    transform: TargetTransform,
) -> Result<Vec<PredictorTargets<T>>> {
    let (n, layers) = (params.config.patches, params.config.layers);
    schedule.validate(n)?;
    (1..layers)
        .map(|l| {
            let deeper = &schedule.masks()[l..];
            let partial = partial_schedule(n, l, deeper)?;
            let pairs: Vec<(Matrix<T>, Vec<T>)> = data
                .inputs
                .par_iter()
                .map(|x| {
                    let trace = model_forward(x, params, Some(&partial))?;
                    let s = significance_per_sample(&trace, deeper, l)?;
                    Ok((trace.features[l - 1].clone(), transform.apply(&s)))
                })
                .collect::<Result<_>>()?;
            let (inputs, targets) = pairs.into_iter().unzip();
            Ok(PredictorTargets { inputs, targets })
        })
        .collect()
}

/// Mean squared error of one predictor over the non-class rows of every input.
pub fn predictor_mse<T: Scalar>(
    predictor: &Predictor<T>,
    data: &PredictorTargets<T>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (z, y) in data.inputs.iter().zip(&data.targets) {
        for (p, t) in predictor_forward(z, predictor)?.iter().zip(y).skip(1) {
            total += (p.to_f64_lossy() - t.to_f64_lossy()).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("predictor data"));
    }
    Ok(total / count as f64)
}

/// Adam on the mean squared error over non-class rows, mini-batches in input
/// order. The class token is always kept, so its score is never regressed.
pub fn fit_predictor<T: Scalar>(
    mut predictor: Predictor<T>,
    data: &PredictorTargets<T>,
    options: &PredictorTrainOptions,
) -> Result<Predictor<T>> {
    if data.inputs.is_empty() {
        return Err(Error::Empty("predictor data"));
    }
    let p = predictor.pooled_dim();
    let pooled: Vec<Vec<Vec<f64>>> = data
        .inputs
        .iter()
        .map(|z| {
            predictor.check(z)?;
            Ok((0..z.rows())
                .map(|r| {
                    predictor
                        .pool(z.row(r))
                        .iter()
                        .map(|v| v.to_f64_lossy())
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut w: Vec<f64> = predictor
        .weights
        .data()
        .iter()
        .map(|v| v.to_f64_lossy())
        .collect();
    let mut b = predictor.bias.to_f64_lossy();
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; p + 1];
    let mut v = vec![0.0; p + 1];
    let mut step = 0i32;
    let indices: Vec<usize> = (0..pooled.len()).collect();
    for _ in 0..options.epochs {
        for chunk in indices.chunks(options.batch_size.max(1)) {
            let mut grad = vec![0.0; p + 1];
            let mut rows = 0usize;
            for &i in chunk {
                for (x, y) in pooled[i].iter().zip(&data.targets[i]).skip(1) {
                    let a: f64 = x.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b;
                    let d = 2.0 * (softplus(a) - y.to_f64_lossy()) * sigmoid(a);
                    for (g, xv) in grad.iter_mut().zip(x) {
                        *g += d * xv;
                    }
                    grad[p] += d;
                    rows += 1;
                }
            }
            step += 1;
            let (c1, c2) = (1.0 - beta1.powi(step), 1.0 - beta2.powi(step));
            for k in 0..=p {
                let g = grad[k] / rows as f64;
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let delta = options.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                if k < p {
                    w[k] -= delta;
                } else {
                    b -= delta;
                }
            }
        }
    }
    predictor.weights = Matrix::from_vec(p, 1, w.into_iter().map(T::lit).collect())?;
    predictor.bias = T::lit(b);
    if !predictor.weights.is_finite() || !predictor.bias.is_finite() {
        return Err(Error::Divergence {
            epoch: options.epochs,
            step: step as usize,
        });
    }
    Ok(predictor)
}

/// Fits one predictor per layer `1..L-1` to per-input scores on `data` under
/// the static `schedule`. Model weights are not touched.
pub fn train_predictors<T: Scalar>(
    params: &ModelParams<T>,
    schedule: &MaskSchedule,
    data: &Batch<T>,
    options: &PredictorTrainOptions,
    seed: u64,
) -> Result<PredictorSet<T>> {
    if data.is_empty() {
        return Err(Error::Empty("predictor training data"));
    }
    let cfg = &params.config;
    let group = options.group.unwrap_or_else(|| default_group(cfg.dim));
    let mut rng = Rng::new(seed);
    let init = PredictorSet::init(cfg.layers, cfg.dim, group, &mut rng)?;
    if options.epochs == 0 {
        return Ok(init);
    }
    let subset = data.sample(options.samples, &mut rng);
    let targets = per_instance_targets(params, schedule, &subset, options.target)?;
    let predictors = init
        .predictors
        .into_par_iter()
        .zip(targets.par_iter())
        .map(|(p, t)| fit_predictor(p, t, options))
        .collect::<Result<Vec<_>>>()?;
    for (l, (p, t)) in predictors.iter().zip(&targets).enumerate() {
        debug!("predictor {}: mse {:.4e}", l + 1, predictor_mse(p, t)?);
    }
    Ok(PredictorSet {
        dim: cfg.dim,
        predictors,
    })
}

/// 0-based ranks in ascending order; ties share their average rank.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. Undefined for constant input.
pub fn spearman<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("spearman", (a.len(), 1), (b.len(), 1)));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedStatistic(
            "rank correlation needs at least two values".into(),
        ));
    }
    let lossy = |x: &[T]| x.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>();
    let (ra, rb) = (average_ranks(&lossy(a)), average_ranks(&lossy(b)));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedStatistic(
            "rank correlation of a constant vector".into(),
        ));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Mean over inputs of the Spearman correlation between predicted and true
/// per-input scores of the non-class patches, one value per layer `1..L-1`.
pub fn predictor_rank_correlation<T: Scalar>(
    params: &ModelParams<T>,
    schedule: &MaskSchedule,
    predictors: &PredictorSet<T>,
    data: &Batch<T>,
) -> Result<Vec<f64>> {
    let targets = per_instance_targets(params, schedule, data, TargetTransform::Log1p)?;
    targets
        .iter()
        .zip(&predictors.predictors)
        .map(|(t, p)| {
            let mut total = 0.0;
            for (z, y) in t.inputs.iter().zip(&t.targets) {
                total += spearman(&predictor_forward(z, p)?[1..], &y[1..])?;
            }
            Ok(total / t.inputs.len() as f64)
        })
        .collect()
}

/// A dynamically pruned forward pass.
#[derive(Clone, Debug)]
pub struct DynamicForward<T: Scalar = f64> {
    pub trace: ForwardTrace<T>,
    pub schedule: MaskSchedule,
    /// Layers (1-based) whose budget exceeded the incoming kept count and was clamped.
    pub clamped: Vec<usize>,
}

/// Forward pass where layer `l` keeps the class token plus the `budgets[l-1] − 1`
/// best-scoring patches among those kept at layer `l − 1`. `score(l, Z_{l-1})`
/// supplies scores for layers `1..L-1`; the last layer reuses the scores of layer `L − 1`.
pub fn dynamic_forward_with<T, F>(
    raw_tokens: &Matrix<T>,
    params: &ModelParams<T>,
    budgets: &[usize],
    mut score: F,
) -> Result<DynamicForward<T>>
where
    T: Scalar,
    F: FnMut(usize, &Matrix<T>) -> Result<Vec<T>>,
{
    let cfg = &params.config;
    let (n, layers) = (cfg.patches, cfg.layers);
    if budgets.len() != layers {
        return Err(Error::Config(format!(
            "expected {layers} budgets, got {}",
            budgets.len()
        )));
    }
    if let Some(l) = budgets.iter().position(|&b| b == 0) {
        return Err(Error::Range(format!(
            "budget of layer {} must be at least 1",
            l + 1
        )));
    }
    let mut x = embed_tokens(raw_tokens, params)?;
    let mut prev = PatchMask::all(n);
    let mut features = vec![x.clone()];
    let mut intermediates = Vec::with_capacity(layers);
    let mut attention = Vec::with_capacity(layers);
    let mut masks = Vec::with_capacity(layers);
    let mut clamped = Vec::new();
    let mut scores: Vec<T> = vec![T::zero(); n];
    for l in 1..=layers {
        let mut budget = budgets[l - 1];
        if budget > prev.count() {
            budget = prev.count();
            clamped.push(l);
        }
        if l < layers {
            scores = score(l, &x)?;
            if scores.len() != n {
                return Err(Error::dim("dynamic scores", (n, 1), (scores.len(), 1)));
            }
        }
        let mut candidates: Vec<usize> = prev.indices().into_iter().filter(|&i| i != 0).collect();
        candidates.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        candidates.truncate(budget - 1);
        let mask = PatchMask::class_only(n).union(&PatchMask::from_indices(n, &candidates));
        let out = pruned_block_forward(&x, &prev, &mask, &params.layers[l - 1], cfg, l)?;
        x = out.output;
        features.push(x.clone());
        intermediates.push(out.intermediate);
        attention.push(out.attention);
        masks.push(mask.clone());
        prev = mask;
    }
    let logits = Matrix::from_vec(1, cfg.dim, x.row(0).to_vec())?.matmul(&params.head)?;
    let schedule = MaskSchedule::new(masks.clone(), n)?;
    let mut all_masks = vec![PatchMask::all(n)];
    all_masks.extend(masks);
    Ok(DynamicForward {
        trace: ForwardTrace {
            features,
            intermediates,
            attention,
            logits,
            masks: all_masks,
        },
        schedule,
        clamped,
    })
}

/// Dynamic forward with learned predictors.
pub fn dynamic_model_forward<T: Scalar>(
    raw_tokens: &Matrix<T>,
    params: &ModelParams<T>,
    predictors: &PredictorSet<T>,
    budgets: &[usize],
) -> Result<DynamicForward<T>> {
    let layers = params.config.layers;
    if predictors.predictors.len() != layers.saturating_sub(1)
        || predictors.dim != params.config.dim
    {
        return Err(Error::Config(format!(
            "predictor set covers {} layers of width {}, model needs {} of width {}",
            predictors.predictors.len(),
            predictors.dim,
            layers.saturating_sub(1),
            params.config.dim
        )));
    }
    dynamic_forward_with(raw_tokens, params, budgets, |l, z| {
        predictor_forward(z, &predictors.predictors[l - 1])
    })
}

/// Accuracy of the dynamic forward over a batch, plus the mean per-layer kept counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicEvaluation {
    pub accuracy: f64,
    pub samples: usize,
    pub mean_kept: Vec<f64>,
    pub clamped_inputs: usize,
}

pub fn evaluate_dynamic<T: Scalar>(
    params: &ModelParams<T>,
    predictors: &PredictorSet<T>,
    budgets: &[usize],
    data: &Batch<T>,
) -> Result<DynamicEvaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let runs: Vec<(bool, Vec<usize>, bool)> = data
        .inputs
        .par_iter()
        .zip(data.labels.par_iter())
        .map(|(x, &y)| {
            let f = dynamic_model_forward(x, params, predictors, budgets)?;
            Ok((
                f.trace.predicted_class() == y,
                f.schedule.kept_counts(),
                !f.clamped.is_empty(),
            ))
        })
        .collect::<Result<_>>()?;
    let layers = params.config.layers;
    let mut total_kept = vec![0usize; layers];
    for (_, kept, _) in &runs {
        for (t, &k) in total_kept.iter_mut().zip(kept) {
            *t += k;
        }
    }
    let mean_kept = total_kept
        .iter()
        .map(|&t| t as f64 / runs.len() as f64)
        .collect();
    Ok(DynamicEvaluation {
        accuracy: runs.iter().filter(|r| r.0).count() as f64 / runs.len() as f64,
        samples: runs.len(),
        mean_kept,
        clamped_inputs: runs.iter().filter(|r| r.2).count(),
    })
}
