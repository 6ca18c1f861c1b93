//! Log-odds attention substitution: score every instance twice, once with the
//! learned attention and once with the LR-derived distribution, and train a
//! variant whose attention is frozen to the log-odds distribution throughout.

use super::stats::jsd;
use crate::corpus::{Dataset, Document, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::lr::{log_odds_attention, LogOddsTable};
use crate::models::{AttentionKind, AttentionOverride, EncoderConfig, Model};
use crate::train::{evaluate, train, EvalResult, TrainConfig, TrainLog};

/// Per-instance swap comparison. Multilabel fields are label averages.
#[derive(Clone, Debug)]
pub struct SwapRecord {
    pub id: String,
    pub yhat: f64,
    pub yhat_lo: f64,
    /// JSD between learned attention and the log-odds distribution.
    pub jsd: f64,
    /// Mean absolute per-label output change.
    pub delta: f64,
    pub alpha_hat: Vec<f64>,
    pub alpha_lo: Vec<f64>,
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SwapEval {
    pub original: EvalResult,
    pub swapped: EvalResult,
    pub records: Vec<SwapRecord>,
}

/// Builds the per-label log-odds override for one document.
pub fn logodds_override(
    doc: &Document,
    table: &LogOddsTable,
    use_abs: bool,
) -> Result<AttentionOverride> {
    let rows: Result<Vec<Vec<f64>>> = (0..table.label_count())
        .map(|l| log_odds_attention(doc, table, l, use_abs))
        .collect();
    Ok(AttentionOverride::PerLabel(rows?))
}

/// Scores every document with learned attention and with the log-odds
/// attention swapped in, reporting both AUC sets and the per-instance
/// (JSD, output change) pairs.
pub fn logodds_swap_eval(
    model: &Model,
    docs: &[&Document],
    table: &LogOddsTable,
    use_abs: bool,
) -> Result<SwapEval> {
    if model.vocab_fingerprint != table.vocab_fingerprint {
        return Err(Error::VocabMismatch {
            expected: model.vocab_fingerprint.clone(),
            got: table.vocab_fingerprint.clone(),
        });
    }
    let label_count = model.config.label_count;
    if table.label_count() != label_count {
        return Err(Error::InvalidConfig(format!(
            "table has {} labels, model {label_count}",
            table.label_count()
        )));
    }

    let mut records = Vec::with_capacity(docs.len());
    let mut scores = vec![Vec::with_capacity(docs.len()); label_count];
    let mut scores_lo = vec![Vec::with_capacity(docs.len()); label_count];
    let mut labels = vec![Vec::with_capacity(docs.len()); label_count];
    for doc in docs {
        let base = model.forward(doc)?;
        let alphas_lo: Vec<Vec<f64>> = (0..label_count)
            .map(|l| log_odds_attention(doc, table, l, use_abs))
            .collect::<Result<_>>()?;
        let swapped =
            model.forward_with_override(doc, &AttentionOverride::PerLabel(alphas_lo.clone()))?;

        for l in 0..label_count {
            scores[l].push(base.prediction[l]);
            scores_lo[l].push(swapped.prediction[l]);
            labels[l].push(doc.labels[l]);
        }
        let jsd_mean = alphas_lo
            .iter()
            .map(|a| jsd(&base.attention, a))
            .sum::<Result<f64>>()?
            / label_count as f64;
        let delta = super::permutation::output_delta(&swapped.prediction, &base.prediction);
        records.push(SwapRecord {
            id: doc.id.clone(),
            yhat: mean(&base.prediction),
            yhat_lo: mean(&swapped.prediction),
            jsd: jsd_mean,
            delta,
            alpha_hat: base.attention.clone(),
            alpha_lo: alphas_lo.into_iter().next().expect("at least one label"),
            tokens: doc.tokens.clone(),
        });
    }

    let eval = |scores: &[Vec<f64>]| -> Result<EvalResult> {
        let mut per_label = Vec::with_capacity(label_count);
        let mut positive_counts = Vec::with_capacity(label_count);
        for l in 0..label_count {
            per_label.push(crate::train::auc(&scores[l], &labels[l])?);
            positive_counts.push(labels[l].iter().filter(|&&y| y == 1).count());
        }
        let macro_auc = per_label.iter().sum::<f64>() / label_count as f64;
        Ok(EvalResult {
            per_label_auc: per_label,
            macro_auc,
            positive_counts,
        })
    };
    Ok(SwapEval {
        original: eval(&scores)?,
        swapped: eval(&scores_lo)?,
        records,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Trains a model whose attention is always the per-instance log-odds
/// distribution: attention parameters are never instantiated, and gradients
/// reach the encoder only through the context's dependence on hidden states.
pub fn train_with_frozen_logodds(
    data: &Dataset,
    table: &LogOddsTable,
    encoder: &EncoderConfig,
    train_config: &TrainConfig,
    embeddings: &EmbeddingMatrix,
    model_seed: u64,
    use_abs: bool,
) -> Result<(Model, TrainLog)> {
    if data.vocabulary.fingerprint() != table.vocab_fingerprint {
        return Err(Error::VocabMismatch {
            expected: table.vocab_fingerprint.clone(),
            got: data.vocabulary.fingerprint(),
        });
    }
    let mut config = encoder.clone();
    config.attention = AttentionKind::FrozenExternal;
    let mut model = Model::new(config, embeddings, &data.vocabulary, model_seed)?;
    let source = |doc: &Document| logodds_override(doc, table, use_abs);
    let log = train(&mut model, data, train_config, Some(&source))?;
    Ok((model, log))
}

/// Evaluates a frozen-log-odds model on a document set.
pub fn evaluate_with_logodds(
    model: &Model,
    docs: &[&Document],
    table: &LogOddsTable,
    use_abs: bool,
) -> Result<EvalResult> {
    let source = |doc: &Document| logodds_override(doc, table, use_abs);
    evaluate(model, docs, Some(&source))
}
