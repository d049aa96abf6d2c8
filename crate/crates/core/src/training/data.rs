use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Scalar};

/// Parameters of the synthetic token-classification task.
///
/// Each class owns a few prototype vectors. A sample hides
/// `informative_tokens_per_sample` copies of its class prototypes, each with a
/// random sign, at random positions inside a central foreground window; every
/// other token is Gaussian noise. The random signs cancel in the token mean, so
/// the label cannot be read linearly from pooled tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDatasetSpec {
    pub num_classes: usize,
    /// `N - 1`
    pub tokens_per_sample: usize,
    pub token_dim: usize,
    pub informative_tokens_per_sample: usize,
    pub noise_scale: f64,
    /// Standard deviation of prototype entries.
    pub prototype_scale: f64,
    /// Scale of an unsigned component shared by every informative token.
    pub marker_scale: f64,
    pub prototype_seed: u64,
    pub sample_count: usize,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            tokens_per_sample: 16,
            token_dim: 16,
            informative_tokens_per_sample: 3,
            noise_scale: 0.5,
            prototype_scale: 0.6,
            marker_scale: 1.0,
            prototype_seed: 20_211_201,
            sample_count: 4096,
        }
    }
}

impl ToyDatasetSpec {
    pub const PROTOTYPES_PER_CLASS: usize = 2;

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("toy dataset needs at least 2 classes".into()));
        }
        if self.informative_tokens_per_sample == 0
            || self.informative_tokens_per_sample >= self.tokens_per_sample
        {
            return Err(Error::Config(format!(
                "informative_tokens_per_sample must be in 1..{}",
                self.tokens_per_sample
            )));
        }
        if !(self.prototype_scale > 0.0 && self.prototype_scale.is_finite()) {
            return Err(Error::Config(
                "prototype_scale must be finite and positive".into(),
            ));
        }
        if !(self.marker_scale >= 0.0 && self.marker_scale.is_finite()) {
            return Err(Error::Config(
                "marker_scale must be finite and non-negative".into(),
            ));
        }
        if self.token_dim == 0 {
            return Err(Error::Config("token_dim must be positive".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(
                "noise_scale must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Token positions (0-based among the non-class tokens) that may carry a prototype.
    pub fn foreground(&self) -> std::ops::Range<usize> {
        let t = self.tokens_per_sample;
        let width = (2 * self.informative_tokens_per_sample).max(t / 2).min(t);
        let start = (t - width) / 2;
        start..start + width
    }
}

/// Samples and integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T: Scalar = f64> {
    /// One `(N - 1) × token_dim` matrix per sample.
    pub inputs: Vec<Matrix<T>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Scalar> Batch<T> {
    pub fn new(inputs: Vec<Matrix<T>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Config(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|m| m.shape() != first.shape()) {
                return Err(Error::Config("samples have differing shapes".into()));
            }
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// `(tokens, token_dim)` of each sample.
    pub fn sample_shape(&self) -> Option<(usize, usize)> {
        self.inputs.first().map(Matrix::shape)
    }

    /// Draws `k` distinct samples.
    pub fn sample(&self, k: usize, rng: &mut Rng) -> Self {
        let idx = rng.sample_indices(self.len(), k);
        self.subset(&idx)
    }
}

/// Class prototypes `[class][variant]`, each `1 × token_dim`.
pub fn toy_prototypes(spec: &ToyDatasetSpec) -> Vec<Vec<Matrix<f64>>> {
    let mut rng = Rng::new(spec.prototype_seed);
    (0..spec.num_classes)
        .map(|_| {
            (0..ToyDatasetSpec::PROTOTYPES_PER_CLASS)
                .map(|_| {
                    Matrix::from_fn(1, spec.token_dim, |_, _| {
                        round_f32(spec.prototype_scale * rng.normal())
                    })
                })
                .collect()
        })
        .collect()
}

/// Unsigned component added to every informative token, `1 × token_dim`.
pub fn toy_marker(spec: &ToyDatasetSpec) -> Matrix<f64> {
    let mut rng = Rng::new(spec.prototype_seed).fork(1);
    Matrix::from_fn(1, spec.token_dim, |_, _| {
        round_f32(spec.marker_scale * rng.normal())
    })
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Generates `spec.sample_count` samples. Values are rounded to `f32` so an
/// in-memory dataset equals its serialized form.
pub fn gen_toy_dataset<T: Scalar>(spec: &ToyDatasetSpec, seed: u64) -> Result<Batch<T>> {
    spec.validate()?;
    let prototypes = toy_prototypes(spec);
    let marker = toy_marker(spec);
    let foreground: Vec<usize> = spec.foreground().collect();
    let mut rng = Rng::new(seed);
    let mut inputs = Vec::with_capacity(spec.sample_count);
    let mut labels = Vec::with_capacity(spec.sample_count);
    for _ in 0..spec.sample_count {
        let label = rng.below(spec.num_classes);
        let mut x = Matrix::from_fn(spec.tokens_per_sample, spec.token_dim, |_, _| {
            spec.noise_scale * rng.normal()
        });
        let picks = rng.sample_indices(foreground.len(), spec.informative_tokens_per_sample);
        for p in picks {
            let pos = foreground[p];
            let variant = rng.below(ToyDatasetSpec::PROTOTYPES_PER_CLASS);
            let sign = rng.sign();
            let proto = &prototypes[label][variant];
            for ((dst, &v), &mk) in x
                .row_mut(pos)
                .iter_mut()
                .zip(proto.row(0))
                .zip(marker.row(0))
            {
                *dst += sign * v + mk;
            }
        }
        inputs.push(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            T::lit(round_f32(x.get(i, j)))
        }));
        labels.push(label);
    }
    Batch::new(inputs, labels, spec.num_classes)
}

/// Reads CSV rows `label, p_0 .. p_{H·W-1}` (no header) and cuts each image
/// into non-overlapping `patch × patch` tokens in raster order.
pub fn load_image_grid_csv<T: Scalar, R: Read>(
    reader: R,
    height: usize,
    width: usize,
    patch: usize,
    num_classes: usize,
) -> Result<Batch<T>> {
    if patch == 0 || height % patch != 0 || width % patch != 0 {
        return Err(Error::Config(format!(
            "{height}x{width} image is not divisible into {patch}x{patch} patches"
        )));
    }
    let (gh, gw) = (height / patch, width / patch);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 1 + height * width {
            return Err(Error::Format(format!(
                "row {}: expected {} fields, found {}",
                line + 1,
                1 + height * width,
                record.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}: {e}", line + 1)))
        };
        let label = record[0]
            .parse::<usize>()
            .map_err(|e| Error::Format(format!("row {}: bad label: {e}", line + 1)))?;
        let pixels: Vec<f64> = record.iter().skip(1).map(parse).collect::<Result<_>>()?;
        let tokens = Matrix::from_fn(gh * gw, patch * patch, |t, k| {
            let (pr, pc) = (t / gw, t % gw);
            let (dr, dc) = (k / patch, k % patch);
            T::lit(pixels[(pr * patch + dr) * width + pc * patch + dc])
        });
        inputs.push(tokens);
        labels.push(label);
    }
    Batch::new(inputs, labels, num_classes)
}
