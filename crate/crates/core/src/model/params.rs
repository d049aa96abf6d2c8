use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Scalar};

/// Weights of one transformer block. Per-head projections are `d × d/H`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T: Scalar = f64> {
    pub wq: Vec<Matrix<T>>,
    pub wk: Vec<Matrix<T>>,
    pub wv: Vec<Matrix<T>>,
    /// Output projection, `d × d`.
    pub wo: Matrix<T>,
    /// MLP expansion, `d × d'`.
    pub wa: Matrix<T>,
    /// MLP contraction, `d' × d`.
    pub wb: Matrix<T>,
    pub ln1_g: Matrix<T>,
    pub ln1_b: Matrix<T>,
    pub ln2_g: Matrix<T>,
    pub ln2_b: Matrix<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, dh) = (cfg.dim, cfg.head_dim());
        Self {
            wq: vec![Matrix::zeros(d, dh); cfg.heads],
            wk: vec![Matrix::zeros(d, dh); cfg.heads],
            wv: vec![Matrix::zeros(d, dh); cfg.heads],
            wo: Matrix::zeros(d, d),
            wa: Matrix::zeros(d, cfg.hidden_dim),
            wb: Matrix::zeros(cfg.hidden_dim, d),
            ln1_g: Matrix::filled(1, d, T::one()),
            ln1_b: Matrix::zeros(1, d),
            ln2_g: Matrix::filled(1, d, T::one()),
            ln2_b: Matrix::zeros(1, d),
        }
    }

    fn random(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let (d, dh, dp) = (cfg.dim, cfg.head_dim(), cfg.hidden_dim);
        let mut p = Self::zeros(cfg);
        let sd = 1.0 / (d as f64).sqrt();
        for h in 0..cfg.heads {
            p.wq[h] = gaussian(d, dh, sd, rng);
            p.wk[h] = gaussian(d, dh, sd, rng);
            p.wv[h] = gaussian(d, dh, sd, rng);
        }
        p.wo = gaussian(d, d, sd, rng);
        p.wa = gaussian(d, dp, sd, rng);
        p.wb = gaussian(dp, d, 1.0 / (dp as f64).sqrt(), rng);
        p
    }

    /// `(name suffix, tensor)` pairs in a fixed order.
    pub fn tensors(&self, with_layernorm: bool) -> Vec<(String, &Matrix<T>)> {
        let mut out = Vec::new();
        for (kind, set) in [("Wq", &self.wq), ("Wk", &self.wk), ("Wv", &self.wv)] {
            for (h, m) in set.iter().enumerate() {
                out.push((format!("{kind}.{h}"), m));
            }
        }
        out.push(("Wo".into(), &self.wo));
        out.push(("Wa".into(), &self.wa));
        out.push(("Wb".into(), &self.wb));
        if with_layernorm {
            out.push(("ln1.g".into(), &self.ln1_g));
            out.push(("ln1.b".into(), &self.ln1_b));
            out.push(("ln2.g".into(), &self.ln2_g));
            out.push(("ln2.b".into(), &self.ln2_b));
        }
        out
    }

    pub fn tensors_mut(&mut self, with_layernorm: bool) -> Vec<(String, &mut Matrix<T>)> {
        let Self {
            wq,
            wk,
            wv,
            wo,
            wa,
            wb,
            ln1_g,
            ln1_b,
            ln2_g,
            ln2_b,
        } = self;
        let mut out = Vec::new();
        for (kind, set) in [("Wq", wq), ("Wk", wk), ("Wv", wv)] {
            for (h, m) in set.iter_mut().enumerate() {
                out.push((format!("{kind}.{h}"), m));
            }
        }
        out.push(("Wo".into(), wo));
        out.push(("Wa".into(), wa));
        out.push(("Wb".into(), wb));
        if with_layernorm {
            out.push(("ln1.g".into(), ln1_g));
            out.push(("ln1.b".into(), ln1_b));
            out.push(("ln2.g".into(), ln2_g));
            out.push(("ln2.b".into(), ln2_b));
        }
        out
    }
}

/// All learnable tensors of the model, tagged with the config they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar = f64> {
    pub config: ModelConfig,
    /// `token_dim × d`
    pub patch_projection: Matrix<T>,
    /// `N × d`
    pub positional: Matrix<T>,
    /// `1 × d`
    pub class_token: Matrix<T>,
    pub layers: Vec<LayerParams<T>>,
    /// `d × num_classes`
    pub head: Matrix<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// All weights zero, layer-norm gains one.
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            config: config.clone(),
            patch_projection: Matrix::zeros(config.token_dim, config.dim),
            positional: Matrix::zeros(config.patches, config.dim),
            class_token: Matrix::zeros(1, config.dim),
            layers: (0..config.layers)
                .map(|_| LayerParams::zeros(config))
                .collect(),
            head: Matrix::zeros(config.dim, config.num_classes),
        }
    }

    /// Gaussian initialization scaled by fan-in.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        Ok(Self {
            config: config.clone(),
            patch_projection: gaussian(
                config.token_dim,
                d,
                1.0 / (config.token_dim as f64).sqrt(),
                rng,
            ),
            positional: gaussian(config.patches, d, 0.5, rng),
            class_token: gaussian(1, d, 0.5, rng),
            layers: (0..config.layers)
                .map(|_| LayerParams::random(config, rng))
                .collect(),
            head: gaussian(d, config.num_classes, 1.0 / (d as f64).sqrt(), rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(&self.config);
        for l in &mut z.layers {
            l.ln1_g.fill(T::zero());
            l.ln2_g.fill(T::zero());
        }
        z
    }

    /// Named tensors in file order. Layer indices are 1-based, head indices 0-based.
    pub fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let ln = self.config.use_layernorm;
        let mut out = vec![
            ("embed.proj".to_string(), &self.patch_projection),
            ("embed.pos".to_string(), &self.positional),
            ("embed.cls".to_string(), &self.class_token),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (suffix, m) in layer.tensors(ln) {
                out.push((format!("layer.{}.{suffix}", i + 1), m));
            }
        }
        out.push(("head.W".to_string(), &self.head));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let ln = self.config.use_layernorm;
        let Self {
            patch_projection,
            positional,
            class_token,
            layers,
            head,
            ..
        } = self;
        let mut out = vec![
            ("embed.proj".to_string(), patch_projection),
            ("embed.pos".to_string(), positional),
            ("embed.cls".to_string(), class_token),
        ];
        for (i, layer) in layers.iter_mut().enumerate() {
            for (suffix, m) in layer.tensors_mut(ln) {
                out.push((format!("layer.{}.{suffix}", i + 1), m));
            }
        }
        out.push(("head.W".to_string(), head));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data().len()).sum()
    }

    /// `self += alpha · other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        if self.config != other.config {
            return Err(Error::Config(
                "parameter sets built for different configs".into(),
            ));
        }
        let src = other.tensors();
        for ((_, dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.axpy(alpha, s)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: T) {
        for (_, m) in self.tensors_mut() {
            m.scale_in_place(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Checks every tensor shape against the config.
    pub fn validate(&self) -> Result<()> {
        let reference = Self::zeros(&self.config);
        if self.layers.len() != self.config.layers {
            return Err(Error::Config(format!(
                "expected {} layers, found {}",
                self.config.layers,
                self.layers.len()
            )));
        }
        for l in &self.layers {
            if l.wq.len() != self.config.heads
                || l.wk.len() != self.config.heads
                || l.wv.len() != self.config.heads
            {
                return Err(Error::Config(
                    "per-head projection count does not match heads".into(),
                ));
            }
        }
        for ((name, a), (_, b)) in self.tensors().into_iter().zip(reference.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            patch_projection: self.patch_projection.cast(),
            positional: self.positional.cast(),
            class_token: self.class_token.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    wq: l.wq.iter().map(Matrix::cast).collect(),
                    wk: l.wk.iter().map(Matrix::cast).collect(),
                    wv: l.wv.iter().map(Matrix::cast).collect(),
                    wo: l.wo.cast(),
                    wa: l.wa.cast(),
                    wb: l.wb.cast(),
                    ln1_g: l.ln1_g.cast(),
                    ln1_b: l.ln1_b.cast(),
                    ln2_g: l.ln2_g.cast(),
                    ln2_b: l.ln2_b.cast(),
                })
                .collect(),
            head: self.head.cast(),
        }
    }
}

pub(crate) fn gaussian<T: Scalar>(rows: usize, cols: usize, sd: f64, rng: &mut Rng) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::lit(rng.normal() * sd))
}
