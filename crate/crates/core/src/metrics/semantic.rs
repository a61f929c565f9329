//! Semantic alignment: cosine similarity between a pooled gesture latent
//! and a pooled text representation from the frozen alignment encoders.

use crate::error::{CoreError, Result};

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::validation(format!(
            "cosine inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::validation("cosine of a zero-norm vector is undefined"));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// SA score between a pooled gesture latent and a pooled text latent.
/// The encoders live in the alignment module; this is the shared final
/// comparison, range [-1, 1].
pub fn sa_score(gesture_latent: &[f64], text_latent: &[f64]) -> Result<f64> {
    cosine_similarity(gesture_latent, text_latent)
}
