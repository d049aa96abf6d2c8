//! Reverse-mode gradients for the masked transformer, written out per operation.

use crate::error::Result;
use crate::model::{BlockCache, CachedForward, LayerParams, ModelConfig, ModelParams};
use crate::numerics::{gelu_grad, LayerNormCache, Matrix, Scalar};

fn accumulate<T: Scalar>(dst: &mut Matrix<T>, src: &Matrix<T>) -> Result<()> {
    dst.add_assign(src)
}

fn layer_norm_backward<T: Scalar>(
    d_out: &Matrix<T>,
    cache: &LayerNormCache<T>,
    gain: &Matrix<T>,
    rows: &[bool],
    d_gain: &mut Matrix<T>,
    d_bias: &mut Matrix<T>,
) -> Matrix<T> {
    let d = d_out.cols();
    let n = T::from_usize_lossy(d);
    let g = gain.data();
    let mut d_in = Matrix::zeros(d_out.rows(), d);
    for r in 0..d_out.rows() {
        if !rows[r] {
            continue;
        }
        let dy = d_out.row(r);
        let xhat = cache.normalized.row(r);
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            let dxhat = dy[j] * g[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat[j];
            d_gain.data_mut()[j] += dy[j] * xhat[j];
            d_bias.data_mut()[j] += dy[j];
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        let istd = cache.inv_std[r];
        let dx = d_in.row_mut(r);
        for j in 0..d {
            dx[j] = istd * (dy[j] * g[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
    }
    d_in
}

/// Backpropagates `d_out = ∂loss/∂Z_l` through one cached block, accumulating
/// weight gradients into `grads` and returning `∂loss/∂Z_{l-1}`.
pub(crate) fn block_backward<T: Scalar>(
    cache: &BlockCache<T>,
    p: &LayerParams<T>,
    cfg: &ModelConfig,
    d_out: &Matrix<T>,
    grads: &mut LayerParams<T>,
) -> Result<Matrix<T>> {
    let rows_in = cache.mask_in.bits();
    let rows_out = cache.mask_out.bits();

    // MLP branch: out = diag(m)·gelu(b·Wa)·Wb + Z'
    let mut d_mlp = d_out.clone();
    d_mlp.mask_rows(rows_out);
    accumulate(&mut grads.wb, &cache.hidden_act.matmul_tn(&d_mlp)?)?;
    let d_act = d_mlp.matmul_nt(&p.wb)?;
    let d_pre = d_act.hadamard(&gelu_grad(&cache.hidden_pre))?;
    accumulate(&mut grads.wa, &cache.normed_mid.matmul_tn(&d_pre)?)?;
    let d_normed_mid = d_pre.matmul_nt(&p.wa)?;

    let mut d_inter = d_out.clone();
    match &cache.ln2 {
        Some(ln) => {
            let d = layer_norm_backward(
                &d_normed_mid,
                ln,
                &p.ln2_g,
                rows_out,
                &mut grads.ln2_g,
                &mut grads.ln2_b,
            );
            d_inter.add_assign(&d)?;
        }
        None => d_inter.add_assign(&d_normed_mid)?,
    }
    // Inactive rows of Z' are constant zeros.
    d_inter.mask_rows(rows_out);

    // Z' = diag(m)·(C·Wo) + diag(m)·X
    let mut d_input = d_inter.clone();
    accumulate(&mut grads.wo, &cache.context.matmul_tn(&d_inter)?)?;
    let d_context = d_inter.matmul_nt(&p.wo)?;

    let scale = T::one() / T::from_usize_lossy(cfg.dim).sqrt();
    let dh = cfg.head_dim();
    let mut d_normed_in = Matrix::zeros(cfg.patches, cfg.dim);
    for h in 0..cfg.heads {
        let d_ctx = d_context.column_block(h * dh, dh);
        let att = &cache.attention[h];
        let d_att = d_ctx.matmul_nt(&cache.values[h])?;
        let mut d_v = att.matmul_tn(&d_ctx)?;
        d_v.mask_rows(rows_in);

        let mut d_logits = Matrix::zeros(cfg.patches, cfg.patches);
        for r in 0..cfg.patches {
            if !rows_out[r] {
                continue;
            }
            let pr = att.row(r);
            let dpr = d_att.row(r);
            let mut dot = T::zero();
            for j in 0..cfg.patches {
                dot += pr[j] * dpr[j];
            }
            let out = d_logits.row_mut(r);
            for j in 0..cfg.patches {
                out[j] = pr[j] * (dpr[j] - dot) * scale;
            }
        }
        let d_q = d_logits.matmul(&cache.keys[h])?;
        let mut d_k = d_logits.matmul_tn(&cache.queries[h])?;
        d_k.mask_rows(rows_in);

        accumulate(&mut grads.wq[h], &cache.normed_in.matmul_tn(&d_q)?)?;
        accumulate(&mut grads.wk[h], &cache.normed_in.matmul_tn(&d_k)?)?;
        accumulate(&mut grads.wv[h], &cache.normed_in.matmul_tn(&d_v)?)?;
        d_normed_in.add_assign(&d_q.matmul_nt(&p.wq[h])?)?;
        d_normed_in.add_assign(&d_k.matmul_nt(&p.wk[h])?)?;
        d_normed_in.add_assign(&d_v.matmul_nt(&p.wv[h])?)?;
    }

    match &cache.ln1 {
        Some(ln) => {
            let d = layer_norm_backward(
                &d_normed_in,
                ln,
                &p.ln1_g,
                rows_in,
                &mut grads.ln1_g,
                &mut grads.ln1_b,
            );
            d_input.add_assign(&d)?;
        }
        None => {
            d_normed_in.mask_rows(rows_in);
            d_input.add_assign(&d_normed_in)?;
        }
    }
    Ok(d_input)
}

/// Backpropagates through consecutive cached blocks; returns the gradient w.r.t. the segment input.
pub(crate) fn segment_backward<T: Scalar>(
    caches: &[BlockCache<T>],
    params: &ModelParams<T>,
    d_last: Matrix<T>,
    grads: &mut ModelParams<T>,
) -> Result<Matrix<T>> {
    let mut d = d_last;
    for cache in caches.iter().rev() {
        let l = cache.layer;
        d = block_backward(
            cache,
            &params.layers[l - 1],
            &params.config,
            &d,
            &mut grads.layers[l - 1],
        )?;
    }
    Ok(d)
}

pub(crate) fn embed_backward<T: Scalar>(
    raw_tokens: &Matrix<T>,
    d_embedded: &Matrix<T>,
    grads: &mut ModelParams<T>,
) -> Result<()> {
    grads.positional.add_assign(d_embedded)?;
    for (g, &d) in grads
        .class_token
        .data_mut()
        .iter_mut()
        .zip(d_embedded.row(0))
    {
        *g += d;
    }
    let d_tokens = Matrix::from_fn(d_embedded.rows() - 1, d_embedded.cols(), |i, j| {
        d_embedded.get(i + 1, j)
    });
    grads
        .patch_projection
        .add_assign(&raw_tokens.matmul_tn(&d_tokens)?)
}

/// Cross-entropy of one sample scaled by `weight`; accumulates gradients and returns the weighted loss.
pub(crate) fn cross_entropy_backward<T: Scalar>(
    fwd: &CachedForward<T>,
    label: usize,
    weight: T,
    params: &ModelParams<T>,
    grads: &mut ModelParams<T>,
) -> Result<T> {
    let cfg = &params.config;
    let logits = fwd.logits.row(0);
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let loss = (total.ln() + max - logits[label]) * weight;
    let d_logits = Matrix::from_fn(1, cfg.num_classes, |_, c| {
        let p = exps[c] / total;
        (if c == label { p - T::one() } else { p }) * weight
    });
    let last = &fwd.blocks.last().expect("layers >= 1").output;
    let cls = Matrix::from_vec(1, cfg.dim, last.row(0).to_vec())?;
    grads.head.add_assign(&cls.matmul_tn(&d_logits)?)?;
    let d_cls = d_logits.matmul_nt(&params.head)?;
    let mut d_last = Matrix::zeros(cfg.patches, cfg.dim);
    d_last.row_mut(0).copy_from_slice(d_cls.row(0));
    let d_embedded = segment_backward(&fwd.blocks, params, d_last, grads)?;
    embed_backward(&fwd.raw_tokens, &d_embedded, grads)?;
    Ok(loss)
}

/// `weight · ‖diag(m)(Ẑ − Z)‖²` and its gradient w.r.t. `Ẑ`.
pub(crate) fn masked_sq_error<T: Scalar>(
    predicted: &Matrix<T>,
    target: &Matrix<T>,
    mask: &[bool],
    weight: T,
) -> Result<(T, Matrix<T>)> {
    let mut diff = predicted.sub(target)?;
    diff.mask_rows(mask);
    let loss = diff.frobenius_sq() * weight;
    Ok((loss, diff.scale(T::lit(2.0) * weight)))
}
