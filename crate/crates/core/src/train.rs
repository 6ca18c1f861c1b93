//! Maximum-likelihood training with Adam and L2 regularization, plus AUC
//! evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Document, Split};
use crate::error::{Error, Result};
use crate::models::{AttentionOverride, Model};
use crate::tensor::{ParameterStore, Tape, Tensor, Var};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient, applied as `l2 * param` added to the gradient.
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    /// Global gradient norm cap; 0 disables clipping.
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2: 1e-5,
            batch_size: 32,
            max_epochs: 40,
            patience: 5,
            grad_clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.epsilon <= 0.0 || self.l2 < 0.0 {
            return Err(Error::InvalidConfig(
                "rates must be positive and l2 nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("betas must lie in [0,1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-label AUC evaluation results.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_label_auc: Vec<f64>,
    pub macro_auc: f64,
    pub positive_counts: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_auc: f64,
    pub best_so_far: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["epoch", "train_loss", "dev_macro_auc", "best_so_far"])?;
        for row in &self.epochs {
            writer.write_record([
                row.epoch.to_string(),
                format!("{:.17e}", row.train_loss),
                format!("{:.17e}", row.dev_macro_auc),
                format!("{:.17e}", row.best_so_far),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Binary cross-entropy, averaged over labels. Predictions are clamped to
/// `[1e-12, 1-1e-12]` so a saturated sigmoid cannot produce `log 0`.
pub fn bce_loss(yhat: &[f64], labels: &[u8]) -> f64 {
    debug_assert_eq!(yhat.len(), labels.len());
    let total: f64 = yhat
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / yhat.len() as f64
}

/// Records the same loss on the tape for backpropagation.
pub fn bce_loss_on_tape(tape: &mut Tape, yhat: Var, labels: &[u8]) -> Result<Var> {
    let l = labels.len();
    if tape.value(yhat).len() != l {
        return Err(Error::ShapeMismatch {
            op: "bce",
            detail: format!("{} predictions vs {} labels", tape.value(yhat).len(), l),
        });
    }
    let y = tape.leaf(Tensor::vector(labels.iter().map(|&v| v as f64).collect()))?;
    let ones = tape.leaf(Tensor::vector(vec![1.0; l]))?;
    let p = tape.clamp(yhat, 1e-12, 1.0 - 1e-12)?;
    let ln_p = tape.ln(p)?;
    let pos = tape.hadamard(y, ln_p)?;
    let one_minus_p = tape.sub(ones, p)?;
    let ln_q = tape.ln(one_minus_p)?;
    let one_minus_y = tape.sub(ones, y)?;
    let neg = tape.hadamard(one_minus_y, ln_q)?;
    let both = tape.add(pos, neg)?;
    let mean = tape.mean(both)?;
    tape.scale(mean, -1.0)
}

/// First/second moment accumulators for Adam.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.shape().to_vec());
        AdamState {
            m: store
                .names()
                .map(|n| (n.to_string(), zeros(store.get(n).unwrap())))
                .collect(),
            v: store
                .names()
                .map(|n| (n.to_string(), zeros(store.get(n).unwrap())))
                .collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the accumulated gradients. L2 enters
/// as `l2 * param` added to the raw gradient. Errors (naming the parameter)
/// on any non-finite gradient.
pub fn adam_step(
    store: &mut ParameterStore,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);

    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let grad = store.grad(&name).expect("grad exists").clone();
        if !grad.is_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient of {name}"),
            });
        }
        let m = entry(&mut state.m, &name, &grad);
        let param = store.get_mut(&name).expect("param exists");
        for i in 0..param.len() {
            let g = grad.values()[i] + config.l2 * param.values()[i];
            let mi = config.beta1 * m.values()[i] + (1.0 - config.beta1) * g;
            m.values_mut()[i] = mi;
        }
        let v = entry(&mut state.v, &name, &grad);
        for i in 0..param.len() {
            let g = grad.values()[i] + config.l2 * param.values()[i];
            let vi = config.beta2 * v.values()[i] + (1.0 - config.beta2) * g * g;
            v.values_mut()[i] = vi;
        }
        let m = state.m.get(&name).expect("moment exists");
        let v = state.v.get(&name).expect("moment exists");
        for i in 0..param.len() {
            let m_hat = m.values()[i] / bias1;
            let v_hat = v.values()[i] / bias2;
            param.values_mut()[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

fn entry<'a>(map: &'a mut BTreeMap<String, Tensor>, name: &str, like: &Tensor) -> &'a mut Tensor {
    map.entry(name.to_string())
        .or_insert_with(|| Tensor::zeros(like.shape().to_vec()))
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
pub fn clip_gradients(store: &mut ParameterStore, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let total: f64 = names
        .iter()
        .map(|n| {
            store
                .grad(n)
                .unwrap()
                .values()
                .iter()
                .map(|g| g * g)
                .sum::<f64>()
        })
        .sum();
    let norm = total.sqrt();
    if norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
}

/// Provides a per-document attention override during training/evaluation,
/// e.g. a frozen log-odds distribution.
pub type AttentionSource<'a> = &'a (dyn Fn(&Document) -> Result<AttentionOverride> + Sync);

/// Mann-Whitney AUC: the probability a random positive outranks a random
/// negative, ties counted one half. Errors when only one class is present.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::ConstantRanks { side: "label" });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Average rank within tied groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Scores every document and reports per-label plus macro AUC.
pub fn evaluate(
    model: &Model,
    docs: &[&Document],
    attention: Option<AttentionSource>,
) -> Result<EvalResult> {
    if docs.is_empty() {
        return Err(Error::InvalidInput("no documents to evaluate".into()));
    }
    let label_count = model.config.label_count;
    let mut scores = vec![Vec::with_capacity(docs.len()); label_count];
    let mut labels = vec![Vec::with_capacity(docs.len()); label_count];
    for doc in docs {
        let output = match attention {
            Some(source) => model.forward_with_override(doc, &source(doc)?)?,
            None => model.forward(doc)?,
        };
        for l in 0..label_count {
            scores[l].push(output.prediction[l]);
            labels[l].push(doc.labels[l]);
        }
    }
    let mut per_label = Vec::with_capacity(label_count);
    let mut positives = Vec::with_capacity(label_count);
    for l in 0..label_count {
        per_label.push(auc(&scores[l], &labels[l])?);
        positives.push(labels[l].iter().filter(|&&y| y == 1).count());
    }
    let macro_auc = per_label.iter().sum::<f64>() / label_count as f64;
    Ok(EvalResult {
        per_label_auc: per_label,
        macro_auc,
        positive_counts: positives,
    })
}

/// Trains in place: shuffled seeded mini-batches, one Adam step per batch,
/// dev macro-AUC after each epoch, best checkpoint kept, early stopping after
/// `patience` epochs without improvement. With an attention source the model
/// never attends on its own; gradients flow through the hidden states only.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    config: &TrainConfig,
    attention: Option<AttentionSource>,
) -> Result<TrainLog> {
    config.validate()?;
    data.check_train_classes()?;
    if model.config.label_count != data.label_count {
        return Err(Error::InvalidConfig(format!(
            "model has {} labels, dataset {}",
            model.config.label_count, data.label_count
        )));
    }

    let train_docs: Vec<&Document> = data.split(Split::Train).collect();
    let dev_docs: Vec<&Document> = data.split(Split::Dev).collect();
    if dev_docs.is_empty() && config.max_epochs > 0 {
        return Err(Error::InvalidInput("dataset has no dev split".into()));
    }

    let mut log = TrainLog::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(&model.params);
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_params: Option<ParameterStore> = None;
    let mut stale_epochs = 0;

    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            model.params.zero_grads();
            for &idx in batch {
                let doc = train_docs[idx];
                let override_alpha = attention.map(|f| f(doc)).transpose()?;
                let (_, mut trace) = model.forward_traced(doc, override_alpha.as_ref())?;
                let loss = bce_loss_on_tape(&mut trace.tape, trace.yhat, &doc.labels)?;
                loss_sum += trace.tape.value(loss).item()?;
                trace.backward_into(loss, &mut model.params)?;
            }
            model.params.scale_grads(1.0 / batch.len() as f64);
            freeze_pad_row(&mut model.params);
            clip_gradients(&mut model.params, config.grad_clip_norm);
            adam_step(&mut model.params, &mut adam, config)?;
        }
        let train_loss = loss_sum / train_docs.len() as f64;

        let dev = evaluate(model, &dev_docs, attention)?;
        if dev.macro_auc > best_auc {
            best_auc = dev.macro_auc;
            best_params = Some(model.params.clone());
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
        }
        log.epochs.push(EpochStats {
            epoch,
            train_loss,
            dev_macro_auc: dev.macro_auc,
            best_so_far: best_auc,
        });
        if stale_epochs >= config.patience {
            break;
        }
    }
    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(log)
}

/// The padding embedding stays exactly zero: its gradient is cleared before
/// every update, so the Adam moments never move it.
fn freeze_pad_row(store: &mut ParameterStore) {
    if let Some(grad) = store.grad_mut("embedding") {
        let dim = grad.shape()[1];
        grad.values_mut()[..dim].fill(0.0);
    }
}
