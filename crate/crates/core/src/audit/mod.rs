//! The audit battery: gradient correlation, permutation counterfactuals,
//! adversarial attention search, and log-odds attention substitution.
//!
//! Per-instance audits are independent and read-only with respect to the
//! model, so the suite can fan out across threads; results are always merged
//! in document order, keeping output files deterministic for any job count.

mod adversarial;
mod gradients;
mod logodds;
mod permutation;
mod stats;

pub use adversarial::{
    adversarial_attention_search, adversarial_attention_search_from, AdversarialConfig,
    AdversarialOutcome,
};
pub use gradients::{gradient_attribution, GradientMeasure};
pub use logodds::{
    evaluate_with_logodds, logodds_override, logodds_swap_eval, train_with_frozen_logodds,
    SwapEval, SwapRecord,
};
pub use permutation::{output_delta, permutation_experiment, PermutationOutcome};
pub use stats::{erfc, jsd, kendall_tau, median, TauResult};

use std::path::Path;

use serde::Serialize;

use crate::corpus::{Document, Vocabulary};
use crate::error::Result;
use crate::hashes::hash64;
use crate::models::Model;

/// Per-instance result of the gradient-correlation experiment.
#[derive(Clone, Debug)]
pub struct GradientRecord {
    pub id: String,
    /// Tau-b between attention and gradient scores; NaN when undefined
    /// (either ranking constant).
    pub tau: f64,
    pub p_approx: f64,
}

/// Per-instance result of the permutation experiment.
#[derive(Clone, Debug)]
pub struct PermutationRecord {
    pub id: String,
    pub label: String,
    pub yhat: f64,
    pub max_attention: f64,
    pub median_abs_change: f64,
    pub trivial: bool,
}

/// Per-instance result of the adversarial experiment, plus the attention
/// vectors needed for heatmap rendering.
#[derive(Clone, Debug)]
pub struct AdversarialRecord {
    pub id: String,
    pub yhat: f64,
    pub max_attention: f64,
    pub eps_max_jsd: f64,
    pub delta: f64,
    pub feasible: bool,
    pub tokens: Vec<usize>,
    pub alpha_hat: Vec<f64>,
    pub alpha_adv: Vec<f64>,
    pub yhat_adv: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn doc_seed(base: u64, id: &str) -> u64 {
    base ^ hash64(id.as_bytes())
}

/// Maps documents to per-instance results, in order, optionally across a
/// thread pool. `jobs <= 1` stays on the calling thread.
fn fan_out<T, F>(docs: &[&Document], jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Document) -> Result<T> + Sync,
{
    if jobs <= 1 {
        docs.iter().map(|d| f(d)).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| crate::error::Error::InvalidConfig(e.to_string()))?;
        pool.install(|| docs.par_iter().map(|d| f(d)).collect())
    }
}

/// Kendall correlation between attention weights and gradient attributions
/// for every document.
pub fn run_gradient_audit(
    model: &Model,
    docs: &[&Document],
    measure: GradientMeasure,
    jobs: usize,
) -> Result<Vec<GradientRecord>> {
    fan_out(docs, jobs, |doc| {
        let out = model.forward(doc)?;
        let scores = gradient_attribution(model, doc, measure)?;
        let record = match kendall_tau(&out.attention, &scores) {
            Ok(t) => GradientRecord {
                id: doc.id.clone(),
                tau: t.tau,
                p_approx: t.p_approx,
            },
            // Degenerate rankings: correlation undefined, recorded as NaN.
            Err(crate::error::Error::ConstantRanks { .. }) => GradientRecord {
                id: doc.id.clone(),
                tau: f64::NAN,
                p_approx: f64::NAN,
            },
            Err(e) => return Err(e),
        };
        Ok(record)
    })
}

pub fn run_permutation_audit(
    model: &Model,
    docs: &[&Document],
    n_perms: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<PermutationRecord>> {
    fan_out(docs, jobs, |doc| {
        let base = model.forward(doc)?;
        let outcome = permutation::permutation_experiment_from(
            model,
            doc,
            &base,
            n_perms,
            doc_seed(seed, &doc.id),
        )?;
        Ok(PermutationRecord {
            id: doc.id.clone(),
            label: doc
                .labels
                .iter()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            yhat: mean(&base.prediction),
            max_attention: outcome.max_attention,
            median_abs_change: outcome.median_abs_change,
            trivial: outcome.trivial,
        })
    })
}

pub fn run_adversarial_audit(
    model: &Model,
    docs: &[&Document],
    config: &AdversarialConfig,
    seed: u64,
    jobs: usize,
) -> Result<Vec<AdversarialRecord>> {
    fan_out(docs, jobs, |doc| {
        let base = model.forward(doc)?;
        let outcome = adversarial::adversarial_attention_search_from(
            model,
            doc,
            &base,
            config,
            doc_seed(seed, &doc.id),
        )?;
        Ok(AdversarialRecord {
            id: doc.id.clone(),
            yhat: mean(&base.prediction),
            max_attention: base.max_attention(),
            eps_max_jsd: outcome.eps_max_jsd,
            delta: outcome.delta,
            feasible: outcome.feasible,
            tokens: doc.tokens.clone(),
            alpha_hat: base.attention,
            alpha_adv: outcome.alpha_adv,
            yhat_adv: mean(&outcome.yhat_adv),
        })
    })
}

pub fn write_gradient_csv(records: &[GradientRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "tau", "p_approx"])?;
    for r in records {
        w.write_record([&r.id, &r.tau.to_string(), &r.p_approx.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_permutation_csv(records: &[PermutationRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "label", "yhat", "max_attn", "median_dy"])?;
    for r in records {
        w.write_record([
            &r.id,
            &r.label,
            &r.yhat.to_string(),
            &r.max_attention.to_string(),
            &r.median_abs_change.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_adversarial_csv(records: &[AdversarialRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "yhat", "max_attn", "eps_max_jsd", "dy", "feasible"])?;
    for r in records {
        w.write_record([
            &r.id,
            &r.yhat.to_string(),
            &r.max_attention.to_string(),
            &r.eps_max_jsd.to_string(),
            &r.delta.to_string(),
            &r.feasible.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_swap_csv(eval: &SwapEval, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "yhat", "yhat_lo", "jsd", "dy"])?;
    for r in &eval.records {
        w.write_record([
            &r.id,
            &r.yhat.to_string(),
            &r.yhat_lo.to_string(),
            &r.jsd.to_string(),
            &r.delta.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct AttentionSidecarRow<'a> {
    id: &'a str,
    tokens: Vec<&'a str>,
    alpha_hat: &'a [f64],
    alpha_cf: &'a [f64],
    yhat: f64,
    yhat_cf: f64,
}

/// JSONL sidecar pairing original and counterfactual attention per document,
/// consumed by the heatmap renderer.
pub fn write_adversarial_sidecar(
    records: &[AdversarialRecord],
    vocab: &Vocabulary,
    path: &Path,
) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let row = AttentionSidecarRow {
            id: &r.id,
            tokens: r.tokens.iter().map(|&t| vocab.word(t)).collect(),
            alpha_hat: &r.alpha_hat,
            alpha_cf: &r.alpha_adv,
            yhat: r.yhat,
            yhat_cf: r.yhat_adv,
        };
        writeln!(out, "{}", serde_json::to_string(&row)?)?;
    }
    Ok(())
}

pub fn write_swap_sidecar(eval: &SwapEval, vocab: &Vocabulary, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in &eval.records {
        let row = AttentionSidecarRow {
            id: &r.id,
            tokens: r.tokens.iter().map(|&t| vocab.word(t)).collect(),
            alpha_hat: &r.alpha_hat,
            alpha_cf: &r.alpha_lo,
            yhat: r.yhat,
            yhat_cf: r.yhat_lo,
        };
        writeln!(out, "{}", serde_json::to_string(&row)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, load_embeddings, LabelRule, Split, SyntheticConfig};
    use crate::models::{EncoderConfig, EncoderKind};

    fn setup() -> (Model, crate::corpus::Dataset) {
        let data = generate_synthetic_corpus(&SyntheticConfig {
            n_docs: 30,
            doc_len: 8,
            vocab_size: 16,
            trigger_words: vec!["zephyr".into()],
            label_rule: LabelRule::AnyTrigger,
            seed: 31,
        })
        .unwrap();
        let emb = load_embeddings(None, &data.vocabulary, 6, 32).unwrap();
        let cfg = EncoderConfig {
            embedding_dim: 6,
            hidden_size: 6,
            attention_dim: 4,
            label_count: 1,
            ..EncoderConfig::new(EncoderKind::Projection)
        };
        let model = Model::new(cfg, &emb, &data.vocabulary, 33).unwrap();
        (model, data)
    }

    #[test]
    fn audits_leave_parameters_untouched_and_parallel_matches_serial() {
        let (model, data) = setup();
        let docs: Vec<&Document> = data.split(Split::Test).collect();
        let before: Vec<(String, Vec<f64>)> = model
            .params
            .names()
            .map(|n| (n.to_string(), model.params.get(n).unwrap().values().to_vec()))
            .collect();

        let serial =
            run_permutation_audit(&model, &docs, 20, 5, 1).unwrap();
        let parallel =
            run_permutation_audit(&model, &docs, 20, 5, 3).unwrap();
        assert_eq!(serial.len(), parallel.len());
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(a.id, b.id);
            assert_eq!(
                a.median_abs_change.to_bits(),
                b.median_abs_change.to_bits()
            );
        }

        let grads = run_gradient_audit(&model, &docs, GradientMeasure::GradTimesInput, 2).unwrap();
        assert_eq!(grads.len(), docs.len());

        for (name, values) in before {
            assert_eq!(model.params.get(&name).unwrap().values(), &values[..]);
        }
    }

    #[test]
    fn csv_headers_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let (model, data) = setup();
        let docs: Vec<&Document> = data.split(Split::Test).take(3).collect();

        let g = run_gradient_audit(&model, &docs, GradientMeasure::GradTimesInput, 1).unwrap();
        let path = dir.path().join("gradients.csv");
        write_gradient_csv(&g, &path).unwrap();
        assert!(std::fs::read_to_string(&path)
            .unwrap()
            .starts_with("id,tau,p_approx\n"));

        let p = run_permutation_audit(&model, &docs, 5, 1, 1).unwrap();
        let path = dir.path().join("permute.csv");
        write_permutation_csv(&p, &path).unwrap();
        assert!(std::fs::read_to_string(&path)
            .unwrap()
            .starts_with("id,label,yhat,max_attn,median_dy\n"));

        let cfg = AdversarialConfig {
            steps: 10,
            restarts: 1,
            ..AdversarialConfig::default()
        };
        let a = run_adversarial_audit(&model, &docs, &cfg, 1, 1).unwrap();
        let path = dir.path().join("adversarial.csv");
        write_adversarial_csv(&a, &path).unwrap();
        assert!(std::fs::read_to_string(&path)
            .unwrap()
            .starts_with("id,yhat,max_attn,eps_max_jsd,dy,feasible\n"));

        let sidecar = dir.path().join("adversarial.jsonl");
        write_adversarial_sidecar(&a, &data.vocabulary, &sidecar).unwrap();
        let first = std::fs::read_to_string(&sidecar).unwrap();
        let parsed: serde_json::Value =
            serde_json::from_str(first.lines().next().unwrap()).unwrap();
        assert!(parsed.get("alpha_hat").is_some());
        assert!(parsed.get("alpha_cf").is_some());
    }
}
