use super::{Matrix, Scalar};
use crate::error::{Error, Result};

/// Cubic coefficient of the tanh GeLU approximation.
pub const GELU_COEFF: f64 = 0.044715;

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r), None);
    }
    out
}

/// Row-wise softmax restricted to the columns flagged in `columns`; other
/// columns get exactly zero probability. Rows not flagged in `rows` are zeroed.
pub fn softmax_rows_masked<T: Scalar>(m: &Matrix<T>, rows: &[bool], columns: &[bool]) -> Matrix<T> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        if rows[r] {
            softmax_in_place(out.row_mut(r), Some(columns));
        } else {
            out.row_mut(r).iter_mut().for_each(|x| *x = T::zero());
        }
    }
    out
}

fn softmax_in_place<T: Scalar>(row: &mut [T], columns: Option<&[bool]>) {
    let active = |j: usize| columns.is_none_or(|c| c[j]);
    let mut max = T::neg_infinity();
    for (j, &x) in row.iter().enumerate() {
        if active(j) && x > max {
            max = x;
        }
    }
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|x| *x = T::zero());
        return;
    }
    let mut total = T::zero();
    for (j, x) in row.iter_mut().enumerate() {
        if active(j) {
            *x = (*x - max).exp();
            total += *x;
        } else {
            *x = T::zero();
        }
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// `0.5 x (1 + tanh(√(2/π) (x + 0.044715 x³)))`
#[inline]
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + T::lit(GELU_COEFF) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(GELU_COEFF);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    T::lit(0.5) * (T::one() + t)
        + T::lit(0.5) * x * sech2 * c * (T::one() + T::lit(3.0) * k * x * x)
}

pub fn gelu<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    m.map(gelu_scalar)
}

/// Elementwise derivative of [`gelu`].
pub fn gelu_grad<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    m.map(gelu_grad_scalar)
}

/// Saved statistics for the layer-norm backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T: Scalar> {
    pub normalized: Matrix<T>,
    pub inv_std: Vec<T>,
}

pub fn layer_norm_rows<T: Scalar>(
    m: &Matrix<T>,
    gain: &Matrix<T>,
    bias: &Matrix<T>,
    eps: T,
) -> Result<Matrix<T>> {
    let rows = vec![true; m.rows()];
    layer_norm_rows_cached(m, gain, bias, eps, &rows).map(|(out, _)| out)
}

/// Layer norm on the rows flagged in `rows`; unflagged rows are left zero.
pub fn layer_norm_rows_cached<T: Scalar>(
    m: &Matrix<T>,
    gain: &Matrix<T>,
    bias: &Matrix<T>,
    eps: T,
    rows: &[bool],
) -> Result<(Matrix<T>, LayerNormCache<T>)> {
    let d = m.cols();
    if gain.data().len() != d || bias.data().len() != d {
        return Err(Error::dim("layer_norm_rows", m.shape(), gain.shape()));
    }
    if eps <= T::zero() {
        return Err(Error::Config("layer-norm eps must be positive".into()));
    }
    let n = T::from_usize_lossy(d);
    let mut out = Matrix::zeros(m.rows(), d);
    let mut normalized = Matrix::zeros(m.rows(), d);
    let mut inv_std = vec![T::zero(); m.rows()];
    for r in 0..m.rows() {
        if !rows[r] {
            continue;
        }
        let x = m.row(r);
        let mean = x.iter().copied().sum::<T>() / n;
        let mut var = T::zero();
        for &v in x {
            var += (v - mean) * (v - mean);
        }
        var /= n;
        let istd = T::one() / (var + eps).sqrt();
        inv_std[r] = istd;
        let xhat = normalized.row_mut(r);
        for j in 0..d {
            xhat[j] = (x[j] - mean) * istd;
        }
        let o = out.row_mut(r);
        for j in 0..d {
            o[j] = xhat[j] * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Result of [`mean_pairwise_cosine`]: the mean plus how many zero rows were skipped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineStats {
    pub mean: f64,
    pub excluded_zero_rows: usize,
}

/// Mean cosine similarity over all unordered pairs of nonzero rows.
pub fn mean_pairwise_cosine<T: Scalar>(m: &Matrix<T>) -> Result<CosineStats> {
    let mut rows = Vec::with_capacity(m.rows());
    let mut excluded = 0;
    for r in 0..m.rows() {
        let norm = m
            .row(r)
            .iter()
            .map(|&x| x.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            rows.push((r, norm));
        } else {
            excluded += 1;
        }
    }
    if rows.len() < 2 {
        return Err(Error::UndefinedStatistic(format!(
            "pairwise cosine needs at least 2 nonzero rows, found {}",
            rows.len()
        )));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            let (ra, na) = rows[a];
            let (rb, nb) = rows[b];
            let dot: f64 = m
                .row(ra)
                .iter()
                .zip(m.row(rb))
                .map(|(&x, &y)| x.to_f64_lossy() * y.to_f64_lossy())
                .sum();
            total += dot / (na * nb);
            pairs += 1;
        }
    }
    Ok(CosineStats {
        mean: total / pairs as f64,
        excluded_zero_rows: excluded,
    })
}
