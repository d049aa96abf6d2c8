use super::block::block_forward_cached;
use super::{BlockCache, MaskSchedule, ModelParams, PatchMask};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};

/// Features, intermediates and attention maps captured by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T: Scalar = f64> {
    /// `Z_0 .. Z_L`
    pub features: Vec<Matrix<T>>,
    /// `Z'_1 .. Z'_L`, stored at index `l - 1`.
    pub intermediates: Vec<Matrix<T>>,
    /// `attention[l - 1][h]` is `P_l^h`.
    pub attention: Vec<Vec<Matrix<T>>>,
    /// `1 × num_classes`
    pub logits: Matrix<T>,
    /// `m_0 .. m_L`; `m_0` is all ones.
    pub masks: Vec<PatchMask>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn layers(&self) -> usize {
        self.attention.len()
    }

    /// `Z_l` for `l = 0..=L`.
    pub fn feature(&self, l: usize) -> &Matrix<T> {
        &self.features[l]
    }

    /// `P_l^h` for 1-based `l`.
    pub fn attention_map(&self, l: usize, h: usize) -> &Matrix<T> {
        &self.attention[l - 1][h]
    }

    pub fn predicted_class(&self) -> usize {
        argmax(self.logits.data())
    }
}

/// A forward pass with every block cache retained.
#[derive(Clone, Debug)]
pub struct CachedForward<T: Scalar = f64> {
    pub raw_tokens: Matrix<T>,
    pub embedded: Matrix<T>,
    pub blocks: Vec<BlockCache<T>>,
    pub logits: Matrix<T>,
}

impl<T: Scalar> CachedForward<T> {
    pub fn into_trace(self) -> ForwardTrace<T> {
        let mut features = Vec::with_capacity(self.blocks.len() + 1);
        let mut masks = Vec::with_capacity(self.blocks.len() + 1);
        masks.push(PatchMask::all(self.embedded.rows()));
        features.push(self.embedded);
        let mut intermediates = Vec::with_capacity(self.blocks.len());
        let mut attention = Vec::with_capacity(self.blocks.len());
        for b in self.blocks {
            features.push(b.output);
            intermediates.push(b.intermediate);
            attention.push(b.attention);
            masks.push(b.mask_out);
        }
        ForwardTrace {
            features,
            intermediates,
            attention,
            logits: self.logits,
            masks,
        }
    }
}

pub(crate) fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Row 0 is the class token; rows `1..N` are projected raw tokens. Positional rows are added to all.
pub fn embed_tokens<T: Scalar>(
    raw_tokens: &Matrix<T>,
    params: &ModelParams<T>,
) -> Result<Matrix<T>> {
    let cfg = &params.config;
    let expected = (cfg.patches - 1, cfg.token_dim);
    if raw_tokens.shape() != expected {
        return Err(Error::dim("embed_tokens", raw_tokens.shape(), expected));
    }
    let projected = raw_tokens.matmul(&params.patch_projection)?;
    let mut z = Matrix::zeros(cfg.patches, cfg.dim);
    z.row_mut(0).copy_from_slice(params.class_token.row(0));
    for r in 1..cfg.patches {
        z.row_mut(r).copy_from_slice(projected.row(r - 1));
    }
    z.add_assign(&params.positional)?;
    Ok(z)
}

/// Runs blocks `first..=last` (1-based) on `input = Z_{first-1}`, whose active rows are `mask_before`.
pub fn forward_segment<T: Scalar>(
    input: &Matrix<T>,
    params: &ModelParams<T>,
    first: usize,
    mask_before: &PatchMask,
    masks: &[PatchMask],
) -> Result<Vec<BlockCache<T>>> {
    let cfg = &params.config;
    let last = first + masks.len() - 1;
    if first == 0 || last > cfg.layers {
        return Err(Error::Range(format!(
            "segment {first}..={last} outside 1..={}",
            cfg.layers
        )));
    }
    let mut caches: Vec<BlockCache<T>> = Vec::with_capacity(masks.len());
    for (offset, mask_out) in masks.iter().enumerate() {
        let l = first + offset;
        let (x, m_in) = match caches.last() {
            Some(prev) => (&prev.output, &prev.mask_out),
            None => (input, mask_before),
        };
        let cache = block_forward_cached(x, m_in, mask_out, &params.layers[l - 1], cfg, l)?;
        caches.push(cache);
    }
    Ok(caches)
}

/// Full forward with caches. With a schedule, layer `l` uses `m_{l-1} → m_l`.
pub fn model_forward_cached<T: Scalar>(
    raw_tokens: &Matrix<T>,
    params: &ModelParams<T>,
    schedule: Option<&MaskSchedule>,
) -> Result<CachedForward<T>> {
    let cfg = &params.config;
    let masks = match schedule {
        Some(s) => {
            if s.layers() != cfg.layers {
                return Err(Error::InvalidMask(format!(
                    "schedule has {} layers, model has {}",
                    s.layers(),
                    cfg.layers
                )));
            }
            s.validate(cfg.patches)?;
            s.masks().to_vec()
        }
        None => vec![PatchMask::all(cfg.patches); cfg.layers],
    };
    let embedded = embed_tokens(raw_tokens, params)?;
    let blocks = forward_segment(&embedded, params, 1, &PatchMask::all(cfg.patches), &masks)?;
    let last = &blocks.last().expect("at least one layer").output;
    let cls = Matrix::from_vec(1, cfg.dim, last.row(0).to_vec())?;
    let logits = cls.matmul(&params.head)?;
    Ok(CachedForward {
        raw_tokens: raw_tokens.clone(),
        embedded,
        blocks,
        logits,
    })
}

/// Chains the (optionally masked) blocks and applies the classifier to the class-token row of `Z_L`.
pub fn model_forward<T: Scalar>(
    raw_tokens: &Matrix<T>,
    params: &ModelParams<T>,
    schedule: Option<&MaskSchedule>,
) -> Result<ForwardTrace<T>> {
    model_forward_cached(raw_tokens, params, schedule).map(CachedForward::into_trace)
}
