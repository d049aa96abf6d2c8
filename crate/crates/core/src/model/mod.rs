//! The L-layer vision transformer: full and patch-masked forward passes.
//!
//! Pruned patches live as explicit zero rows in full `N×d` buffers. The
//! compact path in [`compact`] gathers active rows physically and is checked
//! against the dense path; dense is authoritative.

mod block;
pub mod compact;
mod config;
mod forward;
mod mask;
mod params;
pub mod reference;

pub use block::{block_forward, pruned_block_forward, BlockCache, BlockOutput};
pub use config::ModelConfig;
pub(crate) use forward::argmax;
pub use forward::{
    embed_tokens, forward_segment, model_forward, model_forward_cached, CachedForward, ForwardTrace,
};
pub use mask::{MaskSchedule, PatchMask};
pub use params::{LayerParams, ModelParams};
