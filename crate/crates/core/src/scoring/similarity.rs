use crate::error::{Error, Result};
use crate::model::ForwardTrace;
use crate::numerics::{mean_pairwise_cosine, Scalar};

/// Mean pairwise cosine similarity of the non-class patch rows of `Z_0..Z_L`, averaged over traces.
pub fn layer_similarity_profile<T: Scalar>(traces: &[ForwardTrace<T>]) -> Result<Vec<f64>> {
    let first = traces.first().ok_or(Error::Empty("similarity trace set"))?;
    let levels = first.features.len();
    let mut profile = vec![0.0; levels];
    for trace in traces {
        for (l, z) in trace.features.iter().enumerate() {
            let patches: Vec<usize> = (1..z.rows()).collect();
            profile[l] += mean_pairwise_cosine(&z.select_rows(&patches))?.mean;
        }
    }
    profile.iter_mut().for_each(|p| *p /= traces.len() as f64);
    Ok(profile)
}
