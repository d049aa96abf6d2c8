use super::{LayerParams, ModelConfig, PatchMask};
use crate::error::{Error, Result};
use crate::numerics::{
    gelu, layer_norm_rows_cached, softmax_rows_masked, LayerNormCache, Matrix, Scalar,
};

/// What a block hands to the next layer and to the trace.
#[derive(Clone, Debug)]
pub struct BlockOutput<T: Scalar = f64> {
    /// `Z_l`
    pub output: Matrix<T>,
    /// `Z'_l`
    pub intermediate: Matrix<T>,
    /// One `N × N` map per head; rows outside `mask_out` are zero.
    pub attention: Vec<Matrix<T>>,
}

/// Every intermediate of one masked block evaluation, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct BlockCache<T: Scalar = f64> {
    /// 1-based layer index.
    pub layer: usize,
    pub mask_in: PatchMask,
    pub mask_out: PatchMask,
    pub input: Matrix<T>,
    pub ln1: Option<LayerNormCache<T>>,
    pub normed_in: Matrix<T>,
    pub queries: Vec<Matrix<T>>,
    pub keys: Vec<Matrix<T>>,
    pub values: Vec<Matrix<T>>,
    pub attention: Vec<Matrix<T>>,
    /// Concatenated per-head `P·V`.
    pub context: Matrix<T>,
    pub intermediate: Matrix<T>,
    pub ln2: Option<LayerNormCache<T>>,
    pub normed_mid: Matrix<T>,
    pub hidden_pre: Matrix<T>,
    pub hidden_act: Matrix<T>,
    pub output: Matrix<T>,
}

impl<T: Scalar> BlockCache<T> {
    pub fn into_output(self) -> BlockOutput<T> {
        BlockOutput {
            output: self.output,
            intermediate: self.intermediate,
            attention: self.attention,
        }
    }
}

/// Unmasked block: `Z' = MSA(Z) + Z`, `B(Z) = MLP(Z') + Z'`.
pub fn block_forward<T: Scalar>(
    input: &Matrix<T>,
    params: &LayerParams<T>,
    config: &ModelConfig,
    layer: usize,
) -> Result<BlockOutput<T>> {
    let all = PatchMask::all(config.patches);
    pruned_block_forward(input, &all, &all, params, config, layer)
}

/// Masked block. Keys and values come from `mask_in` rows; queries, attention
/// rows, the output projection and the MLP run on `mask_out` rows only. Rows
/// outside `mask_out` are zero in every returned buffer.
pub fn pruned_block_forward<T: Scalar>(
    input: &Matrix<T>,
    mask_in: &PatchMask,
    mask_out: &PatchMask,
    params: &LayerParams<T>,
    config: &ModelConfig,
    layer: usize,
) -> Result<BlockOutput<T>> {
    block_forward_cached(input, mask_in, mask_out, params, config, layer)
        .map(BlockCache::into_output)
}

pub(crate) fn block_forward_cached<T: Scalar>(
    input: &Matrix<T>,
    mask_in: &PatchMask,
    mask_out: &PatchMask,
    p: &LayerParams<T>,
    cfg: &ModelConfig,
    layer: usize,
) -> Result<BlockCache<T>> {
    let (n, d) = (cfg.patches, cfg.dim);
    if input.shape() != (n, d) {
        return Err(Error::dim("block_forward", input.shape(), (n, d)));
    }
    if mask_in.len() != n || mask_out.len() != n {
        return Err(Error::InvalidMask(format!(
            "layer {layer} masks must have length {n}"
        )));
    }
    if !mask_out.is_subset_of(mask_in) {
        return Err(Error::MaskNesting { layer });
    }
    let rows_in = mask_in.bits();
    let rows_out = mask_out.bits();
    let eps = T::lit(ModelConfig::LAYER_NORM_EPS);

    let (normed_in, ln1) = if cfg.use_layernorm {
        let (y, c) = layer_norm_rows_cached(input, &p.ln1_g, &p.ln1_b, eps, rows_in)?;
        (y, Some(c))
    } else {
        let mut y = input.clone();
        y.mask_rows(rows_in);
        (y, None)
    };

    let scale = T::one() / T::from_usize_lossy(d).sqrt();
    let dh = cfg.head_dim();
    let mut queries = Vec::with_capacity(cfg.heads);
    let mut keys = Vec::with_capacity(cfg.heads);
    let mut values = Vec::with_capacity(cfg.heads);
    let mut attention = Vec::with_capacity(cfg.heads);
    let mut context = Matrix::zeros(n, d);
    for h in 0..cfg.heads {
        let q = project_rows(&normed_in, &p.wq[h], rows_out)?;
        let k = project_rows(&normed_in, &p.wk[h], rows_in)?;
        let v = project_rows(&normed_in, &p.wv[h], rows_in)?;
        let logits = q.matmul_nt(&k)?.scale(scale);
        let att = softmax_rows_masked(&logits, rows_out, rows_in);
        let ctx = att.matmul(&v)?;
        context.set_column_block(h * dh, &ctx);
        queries.push(q);
        keys.push(k);
        values.push(v);
        attention.push(att);
    }

    let mut intermediate = project_rows(&context, &p.wo, rows_out)?;
    for r in 0..n {
        if rows_out[r] {
            for (z, &x) in intermediate.row_mut(r).iter_mut().zip(input.row(r)) {
                *z += x;
            }
        }
    }

    let (normed_mid, ln2) = if cfg.use_layernorm {
        let (y, c) = layer_norm_rows_cached(&intermediate, &p.ln2_g, &p.ln2_b, eps, rows_out)?;
        (y, Some(c))
    } else {
        (intermediate.clone(), None)
    };
    let hidden_pre = project_rows(&normed_mid, &p.wa, rows_out)?;
    let hidden_act = gelu(&hidden_pre);
    let mut output = project_rows(&hidden_act, &p.wb, rows_out)?;
    output.add_assign(&intermediate)?;

    if !output.is_finite() || !intermediate.is_finite() {
        return Err(Error::NumericOverflow { layer });
    }

    Ok(BlockCache {
        layer,
        mask_in: mask_in.clone(),
        mask_out: mask_out.clone(),
        input: input.clone(),
        ln1,
        normed_in,
        queries,
        keys,
        values,
        attention,
        context,
        intermediate,
        ln2,
        normed_mid,
        hidden_pre,
        hidden_act,
        output,
    })
}

/// `x · w` evaluated on the flagged rows only; other rows are zero.
fn project_rows<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, rows: &[bool]) -> Result<Matrix<T>> {
    if x.cols() != w.rows() {
        return Err(Error::dim("project_rows", x.shape(), w.shape()));
    }
    let mut out = Matrix::zeros(x.rows(), w.cols());
    for r in 0..x.rows() {
        if !rows[r] {
            continue;
        }
        let xr = x.row(r);
        let o = out.row_mut(r);
        for (k, &a) in xr.iter().enumerate() {
            for (oj, &b) in o.iter_mut().zip(w.row(k)) {
                *oj += a * b;
            }
        }
    }
    Ok(out)
}
