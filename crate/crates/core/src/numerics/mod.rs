//! Dense linear algebra, elementwise kernels and seeded randomness.
//!
//! Every reduction runs in a fixed loop order so results are bit-reproducible
//! for a given build.

mod kernels;
mod matrix;
mod rng;
mod scalar;

pub use kernels::{
    gelu, gelu_grad, gelu_scalar, layer_norm_rows, layer_norm_rows_cached, mean_pairwise_cosine,
    softmax_rows, softmax_rows_masked, CosineStats, LayerNormCache, GELU_COEFF,
};
pub use matrix::Matrix;
pub use rng::{Rng, RNG_ALGORITHM};
pub use scalar::Scalar;
