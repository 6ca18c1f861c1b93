//! Gradient-based token attribution.

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::Result;
use crate::models::Model;
use crate::tensor::fsum::{fdot, fsum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientMeasure {
    /// |e_t . d yhat / d e_t|: gradient-times-input magnitude (default).
    #[serde(rename = "gxi")]
    GradTimesInput,
    /// L2 norm of the embedding gradient per token.
    #[serde(rename = "l2")]
    L2Norm,
}

/// Nonnegative per-token relevance scores, normalized to sum 1. Multilabel
/// models differentiate the mean of the per-label outputs. When every raw
/// score is zero (a model that ignores its input) the fallback is uniform
/// over non-padding positions.
pub fn gradient_attribution(
    model: &Model,
    doc: &Document,
    measure: GradientMeasure,
) -> Result<Vec<f64>> {
    let (_, mut trace) = model.forward_traced(doc, None)?;
    let scalar = if model.config.label_count == 1 {
        trace.yhat
    } else {
        trace.tape.mean(trace.yhat)?
    };
    let grads = trace.tape.backward(scalar)?;

    let t_len = doc.tokens.len();
    let dim = model.config.embedding_dim;
    let lookup_value = trace.tape.value(trace.lookup).clone();
    let raw: Vec<f64> = match grads.wrt(trace.lookup) {
        Some(g) => (0..t_len)
            .map(|t| {
                let row = &g.values()[t * dim..(t + 1) * dim];
                match measure {
                    GradientMeasure::GradTimesInput => fdot(lookup_value.row(t), row).abs(),
                    GradientMeasure::L2Norm => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
                }
            })
            .collect(),
        None => vec![0.0; t_len],
    };

    let total = fsum(raw.iter().copied());
    if total > 0.0 {
        Ok(raw.into_iter().map(|v| v / total).collect())
    } else {
        // 0/0 guard: uniform over non-padding positions.
        let unmasked: Vec<bool> = doc.tokens.iter().map(|&t| t != 0).collect();
        let live = unmasked.iter().filter(|&&m| m).count();
        Ok(unmasked
            .into_iter()
            .map(|m| if m { 1.0 / live as f64 } else { 0.0 })
            .collect())
    }
}
