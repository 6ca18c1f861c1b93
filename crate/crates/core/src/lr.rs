//! Bag-of-words logistic regression baseline and the log-odds attention
//! distribution built from its coefficients.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Document, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::{masked_softmax, sigmoid};

const PAD_INDEX: usize = 0;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrConfig {
    /// Ridge coefficient on the weights (bias unregularized).
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once the gradient L2 norm falls below this.
    pub tolerance: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig {
            lambda: 1e-4,
            max_iters: 500,
            tolerance: 1e-6,
        }
    }
}

/// Per-label coefficient vectors over the vocabulary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LrModel {
    /// `[label][word]` coefficients.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub lambda: f64,
    pub vocab_fingerprint: String,
    /// Objective value per iteration, per label; diagnostic only.
    #[serde(skip)]
    pub objective_trace: Vec<Vec<f64>>,
}

impl LrModel {
    pub fn label_count(&self) -> usize {
        self.weights.len()
    }

    /// Per-label probability for one document's bag of words.
    pub fn predict(&self, features: &[(usize, f64)]) -> Vec<f64> {
        (0..self.label_count())
            .map(|l| {
                let score: f64 = features
                    .iter()
                    .map(|&(w, c)| self.weights[l][w] * c)
                    .sum::<f64>()
                    + self.bias[l];
                sigmoid(score)
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let out = std::fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(out), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LrModel> {
        Ok(serde_json::from_reader(BufReader::new(
            std::fs::File::open(path)?,
        ))?)
    }
}

/// Token counts over the vocabulary, sparse and sorted by word index.
/// Padding tokens are excluded.
pub fn featurize_bow(doc: &Document) -> Vec<(usize, f64)> {
    let mut counts = std::collections::BTreeMap::new();
    for &t in &doc.tokens {
        if t != PAD_INDEX {
            *counts.entry(t).or_insert(0.0) += 1.0;
        }
    }
    counts.into_iter().collect()
}

/// Fits one ridge-regularized logistic regression per label by full-batch
/// gradient descent with Armijo backtracking, until the gradient norm falls
/// below `config.tolerance` or the iteration cap. Fully deterministic.
pub fn train_lr(data: &Dataset, config: &LrConfig) -> Result<LrModel> {
    data.check_train_classes()?;
    let docs: Vec<&Document> = data.split(Split::Train).collect();
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let features: Vec<Vec<(usize, f64)>> = docs.iter().map(|d| featurize_bow(d)).collect();
    let vocab_size = data.vocabulary.len();

    let mut weights = Vec::with_capacity(data.label_count);
    let mut bias = Vec::with_capacity(data.label_count);
    let mut traces = Vec::with_capacity(data.label_count);
    for label in 0..data.label_count {
        let targets: Vec<f64> = docs.iter().map(|d| d.labels[label] as f64).collect();
        let (w, b, trace) = fit_single(&features, &targets, vocab_size, config);
        weights.push(w);
        bias.push(b);
        traces.push(trace);
    }
    Ok(LrModel {
        weights,
        bias,
        lambda: config.lambda,
        vocab_fingerprint: data.vocabulary.fingerprint(),
        objective_trace: traces,
    })
}

fn fit_single(
    features: &[Vec<(usize, f64)>],
    targets: &[f64],
    vocab_size: usize,
    config: &LrConfig,
) -> (Vec<f64>, f64, Vec<f64>) {
    let n = features.len() as f64;
    let mut w = vec![0.0; vocab_size];
    let mut b = 0.0;

    let objective = |w: &[f64], b: f64| -> f64 {
        let mut loss = 0.0;
        for (x, &y) in features.iter().zip(targets) {
            let score: f64 = x.iter().map(|&(i, c)| w[i] * c).sum::<f64>() + b;
            // Stable log(1 + e^-|s|) form of the log-likelihood.
            loss += score.max(0.0) - score * y + (-score.abs()).exp().ln_1p();
        }
        loss / n + 0.5 * config.lambda * w.iter().map(|v| v * v).sum::<f64>()
    };

    let mut trace = Vec::new();
    let mut current = objective(&w, b);
    trace.push(current);
    for _ in 0..config.max_iters {
        let mut grad_w = vec![0.0; vocab_size];
        let mut grad_b = 0.0;
        for (x, &y) in features.iter().zip(targets) {
            let score: f64 = x.iter().map(|&(i, c)| w[i] * c).sum::<f64>() + b;
            let residual = sigmoid(score) - y;
            for &(i, c) in x {
                grad_w[i] += residual * c;
            }
            grad_b += residual;
        }
        for (g, &wi) in grad_w.iter_mut().zip(&w) {
            *g = *g / n + config.lambda * wi;
        }
        grad_b /= n;

        let grad_sq: f64 = grad_w.iter().map(|g| g * g).sum::<f64>() + grad_b * grad_b;
        if grad_sq.sqrt() < config.tolerance {
            break;
        }

        // Backtracking line search along the negative gradient.
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand_w: Vec<f64> = w.iter().zip(&grad_w).map(|(wi, g)| wi - step * g).collect();
            let cand_b = b - step * grad_b;
            let cand = objective(&cand_w, cand_b);
            if cand <= current - 1e-4 * step * grad_sq {
                w = cand_w;
                b = cand_b;
                current = cand;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        trace.push(current);
        if !improved {
            break;
        }
    }
    (w, b, trace)
}

/// Per-vocabulary-word coefficients used to build log-odds attention.
/// Every word has an entry; words never seen in training keep coefficient 0.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogOddsTable {
    /// `[label][word]`.
    pub betas: Vec<Vec<f64>>,
    pub vocab_fingerprint: String,
}

impl LogOddsTable {
    pub fn from_model(model: &LrModel) -> Self {
        LogOddsTable {
            betas: model.weights.clone(),
            vocab_fingerprint: model.vocab_fingerprint.clone(),
        }
    }

    pub fn label_count(&self) -> usize {
        self.betas.len()
    }

    /// CSV export with header `word,label,beta`.
    pub fn write_csv(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        if vocab.fingerprint() != self.vocab_fingerprint {
            return Err(Error::VocabMismatch {
                expected: self.vocab_fingerprint.clone(),
                got: vocab.fingerprint(),
            });
        }
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["word", "label", "beta"])?;
        for (label, betas) in self.betas.iter().enumerate() {
            for (word_idx, beta) in betas.iter().enumerate() {
                writer.write_record([
                    vocab.word(word_idx),
                    &label.to_string(),
                    &format!("{beta:.17e}"),
                ])?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Log-odds attention for one document and label: a masked softmax over the
/// per-token coefficient magnitudes (signed coefficients behind `use_abs =
/// false`). Padding positions get exactly zero.
pub fn log_odds_attention(
    doc: &Document,
    table: &LogOddsTable,
    label: usize,
    use_abs: bool,
) -> Result<Vec<f64>> {
    if label >= table.label_count() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} labels",
            table.label_count()
        )));
    }
    let betas = &table.betas[label];
    let scores: Vec<f64> = doc
        .tokens
        .iter()
        .map(|&t| {
            let b = betas[t];
            if use_abs {
                b.abs()
            } else {
                b
            }
        })
        .collect();
    let mask: Vec<bool> = doc.tokens.iter().map(|&t| t != PAD_INDEX).collect();
    masked_softmax(&scores, Some(&mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, LabelRule, SyntheticConfig};
    use crate::train::auc;
    use approx::assert_abs_diff_eq;

    fn doc(tokens: Vec<usize>) -> Document {
        Document {
            id: "d".into(),
            tokens,
            labels: vec![0],
            split: Split::Train,
        }
    }

    #[test]
    fn bow_counts() {
        let f = featurize_bow(&doc(vec![5, 5, 7]));
        assert_eq!(f, vec![(5, 2.0), (7, 1.0)]);
        assert!(featurize_bow(&doc(vec![PAD_INDEX])).is_empty());
        // Counts sum to the number of non-pad tokens.
        let d = doc(vec![3, 4, 4, 9, 3, 3]);
        let total: f64 = featurize_bow(&d).iter().map(|&(_, c)| c).sum();
        assert_eq!(total, 6.0);
    }

    /// Four documents over three words; label follows word 3.
    fn tiny_dataset() -> Dataset {
        let raws = [
            ("a", "foo foo bar", 1, Split::Train),
            ("b", "bar baz", 0, Split::Train),
            ("c", "foo baz baz", 1, Split::Train),
            ("d", "baz bar bar", 0, Split::Train),
        ];
        let lines: Vec<String> = raws
            .iter()
            .map(|(id, text, y, _)| {
                format!(r#"{{"id":"{id}","text":"{text}","labels":[{y}],"split":"train"}}"#)
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        crate::corpus::load_jsonl(&path, 1).unwrap()
    }

    /// Newton/IRLS fit of the same ridge objective; an independent convex
    /// optimizer used as the oracle.
    fn newton_fit(data: &Dataset, lambda: f64) -> (Vec<f64>, f64) {
        let docs: Vec<&Document> = data.split(Split::Train).collect();
        let v = data.vocabulary.len();
        let dim = v + 1; // bias last
        let rows: Vec<Vec<f64>> = docs
            .iter()
            .map(|d| {
                let mut x = vec![0.0; dim];
                for (i, c) in featurize_bow(d) {
                    x[i] = c;
                }
                x[v] = 1.0;
                x
            })
            .collect();
        let ys: Vec<f64> = docs.iter().map(|d| d.labels[0] as f64).collect();
        let n = rows.len() as f64;

        let mut theta = vec![0.0; dim];
        for _ in 0..50 {
            let mut grad = vec![0.0; dim];
            let mut hess = vec![vec![0.0; dim]; dim];
            for (x, &y) in rows.iter().zip(&ys) {
                let score: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum();
                let p = sigmoid(score);
                for i in 0..dim {
                    grad[i] += (p - y) * x[i] / n;
                    for j in 0..dim {
                        hess[i][j] += p * (1.0 - p) * x[i] * x[j] / n;
                    }
                }
            }
            for i in 0..v {
                grad[i] += lambda * theta[i];
                hess[i][i] += lambda;
            }
            // Solve H d = g by Gaussian elimination.
            let mut a = hess;
            let mut rhs = grad.clone();
            for col in 0..dim {
                let pivot = (col..dim)
                    .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
                    .unwrap();
                a.swap(col, pivot);
                rhs.swap(col, pivot);
                let p = a[col][col];
                for r in col + 1..dim {
                    let f = a[r][col] / p;
                    for c in col..dim {
                        a[r][c] -= f * a[col][c];
                    }
                    rhs[r] -= f * rhs[col];
                }
            }
            let mut delta = vec![0.0; dim];
            for r in (0..dim).rev() {
                let mut acc = rhs[r];
                for c in r + 1..dim {
                    acc -= a[r][c] * delta[c];
                }
                delta[r] = acc / a[r][r];
            }
            for (t, d) in theta.iter_mut().zip(&delta) {
                *t -= d;
            }
            if delta.iter().map(|d| d * d).sum::<f64>().sqrt() < 1e-12 {
                break;
            }
        }
        let bias = theta[v];
        theta.truncate(v);
        (theta, bias)
    }

    #[test]
    fn gradient_descent_matches_newton_oracle() {
        let data = tiny_dataset();
        let config = LrConfig {
            lambda: 0.05,
            max_iters: 5000,
            tolerance: 1e-9,
        };
        let model = train_lr(&data, &config).unwrap();
        let (w_ref, b_ref) = newton_fit(&data, config.lambda);
        for (w, r) in model.weights[0].iter().zip(&w_ref) {
            assert_abs_diff_eq!(*w, *r, epsilon = 1e-4);
        }
        assert_abs_diff_eq!(model.bias[0], b_ref, epsilon = 1e-4);
    }

    #[test]
    fn objective_decreases_monotonically() {
        let data = tiny_dataset();
        let model = train_lr(&data, &LrConfig::default()).unwrap();
        let trace = &model.objective_trace[0];
        assert!(trace.len() > 2);
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn separable_feature_gets_sign_matched_weight() {
        let data = tiny_dataset();
        let model = train_lr(&data, &LrConfig::default()).unwrap();
        let foo = data.vocabulary.index_of("foo").unwrap();
        let bar = data.vocabulary.index_of("bar").unwrap();
        assert!(model.weights[0][foo] > 0.0);
        assert!(model.weights[0][bar] < 0.0);
    }

    #[test]
    fn huge_ridge_shrinks_weights_to_zero() {
        let data = tiny_dataset();
        let model = train_lr(
            &data,
            &LrConfig {
                lambda: 1e6,
                ..LrConfig::default()
            },
        )
        .unwrap();
        for w in &model.weights[0] {
            assert!(w.abs() < 1e-4, "weight {w}");
        }
    }

    #[test]
    fn single_class_label_errors() {
        let mut data = tiny_dataset();
        for d in &mut data.documents {
            d.labels[0] = 1;
        }
        assert!(matches!(
            train_lr(&data, &LrConfig::default()),
            Err(Error::SingleClass { label: 0 })
        ));
    }

    #[test]
    fn lr_separates_planted_corpus() {
        let data = generate_synthetic_corpus(&SyntheticConfig {
            n_docs: 300,
            doc_len: 20,
            vocab_size: 40,
            trigger_words: vec!["zephyr".into()],
            label_rule: LabelRule::AnyTrigger,
            seed: 17,
        })
        .unwrap();
        let model = train_lr(&data, &LrConfig::default()).unwrap();
        let test: Vec<&Document> = data.split(Split::Test).collect();
        let scores: Vec<f64> = test
            .iter()
            .map(|d| model.predict(&featurize_bow(d))[0])
            .collect();
        let labels: Vec<u8> = test.iter().map(|d| d.labels[0]).collect();
        let auc = auc(&scores, &labels).unwrap();
        assert!(auc >= 0.95, "LR AUC {auc}");

        // Never-seen words keep a zero coefficient.
        let table = LogOddsTable::from_model(&model);
        let unk = data.vocabulary.unk_index();
        assert_eq!(table.betas[0][unk], 0.0);
    }

    fn table_with(betas: Vec<f64>) -> LogOddsTable {
        LogOddsTable {
            betas: vec![betas],
            vocab_fingerprint: "test".into(),
        }
    }

    #[test]
    fn log_odds_attention_examples() {
        // All positions share one word: uniform.
        let table = table_with(vec![0.0, 0.0, 0.0, 0.7]);
        let alpha = log_odds_attention(&doc(vec![3, 3, 3]), &table, 0, true).unwrap();
        for a in &alpha {
            assert_abs_diff_eq!(*a, 1.0 / 3.0, epsilon = 1e-12);
        }

        // Direct evaluation of softmax(|0|, |ln 2|, |-ln 2|) = (0.2, 0.4, 0.4).
        let ln2 = std::f64::consts::LN_2;
        let table = table_with(vec![0.0, 0.0, 0.0, 0.0, ln2, -ln2]);
        let alpha = log_odds_attention(&doc(vec![3, 4, 5]), &table, 0, true).unwrap();
        assert_abs_diff_eq!(alpha[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha[1], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha[2], 0.4, epsilon = 1e-12);

        // Signed variant: softmax(0, ln 2, -ln 2) = (2/7, 4/7, 1/7).
        let alpha = log_odds_attention(&doc(vec![3, 4, 5]), &table, 0, false).unwrap();
        assert_abs_diff_eq!(alpha[0], 2.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha[1], 4.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha[2], 1.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn dominant_coefficient_concentrates_mass() {
        let t = 5usize;
        // Gap of ln(9(T-1)) puts at least 0.9 on the large coordinate.
        let gap = (9.0 * (t as f64 - 1.0)).ln();
        let mut betas = vec![0.0; 10];
        betas[7] = gap;
        let table = table_with(betas);
        let alpha = log_odds_attention(&doc(vec![3, 4, 5, 6, 7]), &table, 0, true).unwrap();
        assert!(alpha[4] >= 0.9 - 1e-12, "mass {}", alpha[4]);
    }

    #[test]
    fn log_odds_attention_is_a_distribution_and_zero_on_padding() {
        let table = table_with(vec![0.3, -0.2, 0.9, 0.5, -0.7]);
        let d = doc(vec![3, PAD_INDEX, 4, 2]);
        let alpha = log_odds_attention(&d, &table, 0, true).unwrap();
        assert_eq!(alpha[1], 0.0);
        assert!(alpha.iter().all(|&a| a >= 0.0));
        let total: f64 = alpha.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn log_odds_attention_is_position_independent() {
        let table = table_with(vec![0.3, -0.2, 0.9, 0.5, -0.7]);
        let a = log_odds_attention(&doc(vec![2, 3, 4]), &table, 0, true).unwrap();
        let b = log_odds_attention(&doc(vec![4, 2, 3]), &table, 0, true).unwrap();
        assert_eq!(a[0].to_bits(), b[1].to_bits());
        assert_eq!(a[1].to_bits(), b[2].to_bits());
        assert_eq!(a[2].to_bits(), b[0].to_bits());
    }
}
