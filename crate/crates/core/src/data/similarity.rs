use super::Samples;
use crate::error::{Error, Result};

/// Cosine similarity between the token-frequency vectors of a batch and an
/// evaluation set. Only meaningful in LM mode.
pub fn batch_similarity(batch: &Samples, dataset: &Samples) -> Result<f64> {
    let (Some(a), Some(b)) = (batch.token_frequencies(), dataset.token_frequencies()) else {
        return Err(Error::Input("batch similarity needs token samples".into()));
    };
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("batch similarity of an empty sample set".into()));
    }
    let norm = |m: &std::collections::BTreeMap<u32, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = a
        .iter()
        .filter_map(|(k, va)| b.get(k).map(|vb| va * vb))
        .sum();
    Ok(dot / (norm(&a) * norm(&b)))
}
