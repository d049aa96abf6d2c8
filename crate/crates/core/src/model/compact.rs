//! Gathered execution: active rows are copied into compact buffers and only
//! those are multiplied. Every scalar multiply-accumulate of a block matmul is
//! counted, which makes this path the instrumented reference for the cost model.

use super::{embed_tokens, MaskSchedule, ModelConfig, ModelParams, PatchMask};
use crate::error::{Error, Result};
use crate::numerics::{gelu, layer_norm_rows, softmax_rows, Matrix, Scalar};

/// Multiply-accumulate tally, one slot per block.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MacCounter {
    pub per_layer: Vec<u64>,
}

impl MacCounter {
    pub fn new(layers: usize) -> Self {
        Self {
            per_layer: vec![0; layers],
        }
    }

    pub fn total(&self) -> u64 {
        self.per_layer.iter().sum()
    }
}

struct Counted<'a> {
    counter: &'a mut MacCounter,
    slot: usize,
}

impl Counted<'_> {
    fn matmul<T: Scalar>(&mut self, a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
        if a.cols() != b.rows() {
            return Err(Error::dim("compact matmul", a.shape(), b.shape()));
        }
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for k in 0..a.cols() {
                let x = a.get(i, k);
                for j in 0..b.cols() {
                    let o = out.get(i, j);
                    out.set(i, j, o + x * b.get(k, j));
                }
            }
        }
        self.counter.per_layer[self.slot] += (a.rows() * a.cols() * b.cols()) as u64;
        Ok(out)
    }
}

/// One block on gathered rows. `x_in` holds the rows of `mask_in` in index
/// order; the result holds the rows of `mask_out`.
pub fn compact_block_forward<T: Scalar>(
    x_in: &Matrix<T>,
    mask_in: &PatchMask,
    mask_out: &PatchMask,
    params: &ModelParams<T>,
    layer: usize,
    counter: &mut MacCounter,
) -> Result<Matrix<T>> {
    let cfg: &ModelConfig = &params.config;
    if !mask_out.is_subset_of(mask_in) {
        return Err(Error::MaskNesting { layer });
    }
    let p = &params.layers[layer - 1];
    let in_idx = mask_in.indices();
    let out_pos: Vec<usize> = mask_out
        .indices()
        .iter()
        .map(|i| in_idx.binary_search(i).expect("nested mask"))
        .collect();
    let mut mm = Counted {
        counter,
        slot: layer - 1,
    };
    let eps = T::lit(ModelConfig::LAYER_NORM_EPS);

    let normed = if cfg.use_layernorm {
        layer_norm_rows(x_in, &p.ln1_g, &p.ln1_b, eps)?
    } else {
        x_in.clone()
    };
    let normed_out = normed.select_rows(&out_pos);
    let x_out = x_in.select_rows(&out_pos);
    let scale = T::one() / T::from_usize_lossy(cfg.dim).sqrt();
    let dh = cfg.head_dim();
    let mut context = Matrix::zeros(out_pos.len(), cfg.dim);
    for h in 0..cfg.heads {
        let q = mm.matmul(&normed_out, &p.wq[h])?;
        let k = mm.matmul(&normed, &p.wk[h])?;
        let v = mm.matmul(&normed, &p.wv[h])?;
        let logits = mm.matmul(&q, &k.transpose())?.scale(scale);
        let att = softmax_rows(&logits);
        let ctx = mm.matmul(&att, &v)?;
        context.set_column_block(h * dh, &ctx);
    }
    let mut inter = mm.matmul(&context, &p.wo)?;
    inter.add_assign(&x_out)?;
    let normed_mid = if cfg.use_layernorm {
        layer_norm_rows(&inter, &p.ln2_g, &p.ln2_b, eps)?
    } else {
        inter.clone()
    };
    let hidden = gelu(&mm.matmul(&normed_mid, &p.wa)?);
    let mut out = mm.matmul(&hidden, &p.wb)?;
    out.add_assign(&inter)?;
    if !out.is_finite() {
        return Err(Error::NumericOverflow { layer });
    }
    Ok(out)
}

/// Output of [`compact_model_forward`]: features scattered back to `N × d`.
#[derive(Clone, Debug)]
pub struct CompactForward<T: Scalar = f64> {
    pub features: Vec<Matrix<T>>,
    pub logits: Matrix<T>,
    pub macs: MacCounter,
}

pub fn compact_model_forward<T: Scalar>(
    raw_tokens: &Matrix<T>,
    params: &ModelParams<T>,
    schedule: Option<&MaskSchedule>,
) -> Result<CompactForward<T>> {
    let cfg = &params.config;
    let schedule = match schedule {
        Some(s) => {
            s.validate(cfg.patches)?;
            s.clone()
        }
        None => MaskSchedule::all_ones(cfg.layers, cfg.patches),
    };
    let mut counter = MacCounter::new(cfg.layers);
    let z0 = embed_tokens(raw_tokens, params)?;
    let mut features = vec![z0.clone()];
    let mut compact = z0;
    let mut prev = PatchMask::all(cfg.patches);
    for l in 1..=cfg.layers {
        let m = schedule.mask(l);
        compact = compact_block_forward(&compact, &prev, &m, params, l, &mut counter)?;
        let mut full = Matrix::zeros(cfg.patches, cfg.dim);
        for (row, idx) in m.indices().into_iter().enumerate() {
            full.row_mut(idx).copy_from_slice(compact.row(row));
        }
        features.push(full);
        prev = m;
    }
    let last = features.last().expect("layers >= 1");
    let logits = Matrix::from_vec(1, cfg.dim, last.row(0).to_vec())?.matmul(&params.head)?;
    Ok(CompactForward {
        features,
        logits,
        macs: counter,
    })
}
