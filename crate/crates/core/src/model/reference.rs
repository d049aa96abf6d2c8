//! Naive dense oracle for the masked block, written with explicit `diag(m)`
//! products and plain loops. Slow on purpose; used only to check the fast paths.

use super::{embed_tokens, LayerParams, MaskSchedule, ModelConfig, ModelParams, PatchMask};
use crate::error::Result;
use crate::numerics::{gelu_scalar, Matrix};

fn diag(m: &PatchMask, x: &Matrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(
        x.rows(),
        x.cols(),
        |r, c| if m.get(r) { x.get(r, c) } else { 0.0 },
    )
}

fn matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(a.rows(), b.cols(), |i, j| {
        (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
    })
}

fn layer_norm(x: &Matrix<f64>, g: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    let d = x.cols() as f64;
    Matrix::from_fn(x.rows(), x.cols(), |r, c| {
        let mean = x.row(r).iter().sum::<f64>() / d;
        let var = x.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        (x.get(r, c) - mean) / (var + ModelConfig::LAYER_NORM_EPS).sqrt() * g.data()[c]
            + b.data()[c]
    })
}

/// `Z_l` from `Z_{l-1}` with `Z' = diag(m_out)(MSA_{m_in}(Z) + Z)` and
/// `Z_l = diag(m_out)(MLP(Z') + Z')`, where the attention softmax runs over
/// `m_in` columns only.
pub fn dense_block_reference(
    input: &Matrix<f64>,
    mask_in: &PatchMask,
    mask_out: &PatchMask,
    p: &LayerParams<f64>,
    cfg: &ModelConfig,
) -> Matrix<f64> {
    let (n, d, dh) = (cfg.patches, cfg.dim, cfg.head_dim());
    let x = diag(mask_in, input);
    let xn = if cfg.use_layernorm {
        layer_norm(&x, &p.ln1_g, &p.ln1_b)
    } else {
        x.clone()
    };
    let mut msa = Matrix::zeros(n, d);
    for h in 0..cfg.heads {
        let q = matmul(&xn, &p.wq[h]);
        let k = matmul(&xn, &p.wk[h]);
        let v = matmul(&xn, &p.wv[h]);
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    (0..dh).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / (d as f64).sqrt()
                })
                .collect();
            let max = (0..n)
                .filter(|&j| mask_in.get(j))
                .map(|j| logits[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = (0..n)
                .map(|j| {
                    if mask_in.get(j) {
                        (logits[j] - max).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let total: f64 = w.iter().sum();
            for c in 0..dh {
                let ctx: f64 = (0..n).map(|j| w[j] / total * v.get(j, c)).sum();
                msa.set(i, h * dh + c, ctx);
            }
        }
    }
    let mut mid = matmul(&msa, &p.wo);
    for i in 0..n {
        for c in 0..d {
            mid.set(i, c, mid.get(i, c) + x.get(i, c));
        }
    }
    let mid = diag(mask_out, &mid);
    let mn = if cfg.use_layernorm {
        layer_norm(&mid, &p.ln2_g, &p.ln2_b)
    } else {
        mid.clone()
    };
    let hidden = matmul(&mn, &p.wa).map(gelu_scalar);
    let mut out = matmul(&hidden, &p.wb);
    for i in 0..n {
        for c in 0..d {
            out.set(i, c, out.get(i, c) + mid.get(i, c));
        }
    }
    diag(mask_out, &out)
}

/// Features `Z_0..Z_L` of the dense oracle.
pub fn dense_model_reference(
    raw_tokens: &Matrix<f64>,
    params: &ModelParams<f64>,
    schedule: &MaskSchedule,
) -> Result<Vec<Matrix<f64>>> {
    let cfg = &params.config;
    schedule.validate(cfg.patches)?;
    let mut features = vec![embed_tokens(raw_tokens, params)?];
    let mut prev = PatchMask::all(cfg.patches);
    for l in 1..=cfg.layers {
        let m = schedule.mask(l);
        let z = dense_block_reference(&features[l - 1], &prev, &m, &params.layers[l - 1], cfg);
        features.push(z);
        prev = m;
    }
    Ok(features)
}
