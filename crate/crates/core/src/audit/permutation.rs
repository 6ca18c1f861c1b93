//! Permutation counterfactuals: how much does the output move when the
//! learned attention weights are shuffled across positions?

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::stats::median;
use crate::corpus::Document;
use crate::error::Result;
use crate::models::{AttentionOverride, Model, ModelOutput};

#[derive(Clone, Debug)]
pub struct PermutationOutcome {
    /// Median of |yhat' - yhat| over the sampled permutations (mean over
    /// labels for multilabel models).
    pub median_abs_change: f64,
    pub max_attention: f64,
    /// Set when no nontrivial permutation exists (one unmasked position).
    pub trivial: bool,
}

/// Mean absolute per-label output difference.
pub fn output_delta(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Runs `n_perms` seeded uniform permutations of the attention weights over
/// the unmasked positions, re-scores with each as an override, and reports
/// the median absolute output change.
pub fn permutation_experiment(
    model: &Model,
    doc: &Document,
    n_perms: usize,
    seed: u64,
) -> Result<PermutationOutcome> {
    let base = model.forward(doc)?;
    permutation_experiment_from(model, doc, &base, n_perms, seed)
}

/// Same, reusing an existing base forward pass.
pub fn permutation_experiment_from(
    model: &Model,
    doc: &Document,
    base: &ModelOutput,
    n_perms: usize,
    seed: u64,
) -> Result<PermutationOutcome> {
    let alpha = &base.attention;
    let unmasked: Vec<usize> = doc
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != 0)
        .map(|(i, _)| i)
        .collect();
    if unmasked.len() <= 1 {
        return Ok(PermutationOutcome {
            median_abs_change: 0.0,
            max_attention: base.max_attention(),
            trivial: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deltas = Vec::with_capacity(n_perms);
    let mut positions = unmasked.clone();
    for _ in 0..n_perms {
        positions.copy_from_slice(&unmasked);
        positions.shuffle(&mut rng);
        let mut shuffled = alpha.clone();
        for (src, dst) in unmasked.iter().zip(&positions) {
            shuffled[*dst] = alpha[*src];
        }
        let out = model.forward_with_override(doc, &AttentionOverride::Shared(shuffled))?;
        deltas.push(output_delta(&out.prediction, &base.prediction));
    }
    Ok(PermutationOutcome {
        median_abs_change: median(&deltas),
        max_attention: base.max_attention(),
        trivial: false,
    })
}
