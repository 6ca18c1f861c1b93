//! The three encoders, additive attention and the decoder.
//!
//! All encoders produce per-position hidden states of one shared width so a
//! single attention module serves them all. A forward pass can run with
//! learned attention, attention-free pooling, or an externally supplied
//! attention distribution injected in place of the learned one.

mod attention;
mod encoders;

pub use attention::{aggregate_context, attend_additive, decode, AttentionParams};

use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EmbeddingMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::fsum::fsum;
use crate::tensor::{Gradients, ParameterStore, Tape, TapeBinding, Tensor, Var};

/// Padding token index; fixed by vocabulary construction.
const PAD_INDEX: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Bilstm,
    Cnn,
    Projection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    /// Learned additive attention.
    Additive,
    /// No attention: pooled context (mean by default).
    None,
    /// Attention always comes from an external override (e.g. log-odds).
    FrozenExternal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingKind {
    Mean,
    FinalState,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    /// Total per-position hidden width (split across directions for the
    /// BiLSTM and across kernel widths for the CNN).
    #[serde(default = "default_hidden_size")]
    pub hidden_size: usize,
    #[serde(default = "default_kernel_sizes")]
    pub kernel_sizes: Vec<usize>,
    #[serde(default = "default_attention")]
    pub attention: AttentionKind,
    #[serde(default = "default_attention_dim")]
    pub attention_dim: usize,
    /// Context pooling when `attention` is `none`.
    #[serde(default = "default_pooling")]
    pub pooling: PoolingKind,
    #[serde(default = "default_label_count")]
    pub label_count: usize,
}

fn default_embedding_dim() -> usize {
    300
}
fn default_hidden_size() -> usize {
    256
}
fn default_kernel_sizes() -> Vec<usize> {
    vec![1, 3, 5, 7]
}
fn default_attention() -> AttentionKind {
    AttentionKind::Additive
}
fn default_attention_dim() -> usize {
    128
}
fn default_pooling() -> PoolingKind {
    PoolingKind::Mean
}
fn default_label_count() -> usize {
    1
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind) -> Self {
        EncoderConfig {
            kind,
            embedding_dim: default_embedding_dim(),
            hidden_size: default_hidden_size(),
            kernel_sizes: default_kernel_sizes(),
            attention: default_attention(),
            attention_dim: default_attention_dim(),
            pooling: default_pooling(),
            label_count: default_label_count(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.embedding_dim == 0
            || self.hidden_size == 0
            || self.attention_dim == 0
            || self.label_count == 0
        {
            return bad("dimensions must be positive".into());
        }
        match self.kind {
            EncoderKind::Bilstm if self.hidden_size % 2 != 0 => {
                bad(format!("hidden_size {} not even", self.hidden_size))
            }
            EncoderKind::Cnn => {
                if self.kernel_sizes.is_empty() {
                    return bad("cnn needs at least one kernel size".into());
                }
                if self.kernel_sizes.iter().any(|k| k % 2 == 0) {
                    return bad(format!("kernel sizes {:?} must be odd", self.kernel_sizes));
                }
                if self.hidden_size % self.kernel_sizes.len() != 0 {
                    return bad(format!(
                        "hidden_size {} not divisible by {} kernels",
                        self.hidden_size,
                        self.kernel_sizes.len()
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Per-direction state width for the BiLSTM.
    pub(crate) fn direction_size(&self) -> usize {
        self.hidden_size / 2
    }

    /// Filters per kernel width for the CNN.
    pub(crate) fn filters_per_kernel(&self) -> usize {
        self.hidden_size / self.kernel_sizes.len()
    }
}

/// An externally supplied attention distribution for one document.
#[derive(Clone, Debug)]
pub enum AttentionOverride {
    /// One distribution shared by every label.
    Shared(Vec<f64>),
    /// One distribution per label; prediction `l` aggregates with entry `l`.
    PerLabel(Vec<Vec<f64>>),
}

/// Forward-pass results for one document.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Per-position hidden states, `[T, hidden]`.
    pub hidden: Tensor,
    /// Attention distribution actually used (per-label overrides report the
    /// label average).
    pub attention: Vec<f64>,
    /// Aggregated context `[hidden]`; for per-label overrides, the label-0
    /// context.
    pub context: Vec<f64>,
    /// Per-label probabilities, each in (0,1).
    pub prediction: Vec<f64>,
}

impl ModelOutput {
    pub fn max_attention(&self) -> f64 {
        self.attention.iter().cloned().fold(0.0, f64::max)
    }
}

/// A recorded forward pass, ready for a backward sweep.
pub struct Trace {
    pub tape: Tape,
    pub binding: TapeBinding,
    /// Embedded input rows `[T, E]`; its gradient is the per-token embedding
    /// gradient.
    pub lookup: Var,
    /// Encoder output `[T, hidden]`.
    pub hidden: Var,
    /// Prediction vector `[L]`.
    pub yhat: Var,
}

impl Trace {
    /// Backward from a scalar node, folding parameter gradients into `store`.
    pub fn backward_into(&mut self, output: Var, store: &mut ParameterStore) -> Result<Gradients> {
        let grads = self.tape.backward(output)?;
        self.binding.accumulate_grads(&grads, store)?;
        Ok(grads)
    }
}

/// An encoder + attention + decoder bundle over a fixed vocabulary.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: EncoderConfig,
    pub params: ParameterStore,
    /// Fingerprint of the vocabulary the embedding rows are indexed by.
    pub vocab_fingerprint: String,
}

impl Model {
    /// Initializes a model: embeddings are copied from `embeddings` (with the
    /// padding row pinned to zero), other weights use symmetric fan-scaled
    /// uniform init, biases start at zero except the LSTM forget gate at 1.
    pub fn new(
        config: EncoderConfig,
        embeddings: &EmbeddingMatrix,
        vocab: &Vocabulary,
        seed: u64,
    ) -> Result<Model> {
        config.validate()?;
        if embeddings.dim() != config.embedding_dim {
            return Err(Error::InvalidConfig(format!(
                "embedding dim {} does not match config {}",
                embeddings.dim(),
                config.embedding_dim
            )));
        }
        if embeddings.vocab_size() != vocab.len() {
            return Err(Error::InvalidConfig(format!(
                "embedding rows {} do not match vocabulary size {}",
                embeddings.vocab_size(),
                vocab.len()
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();

        let mut table = embeddings.values.clone();
        let dim = config.embedding_dim;
        table.values_mut()[PAD_INDEX * dim..(PAD_INDEX + 1) * dim].fill(0.0);
        params.insert("embedding", table);

        let e = config.embedding_dim;
        let hd = config.hidden_size;
        match config.kind {
            EncoderKind::Bilstm => {
                let h = config.direction_size();
                for dir in ["fwd", "bwd"] {
                    params.insert(
                        &format!("lstm.{dir}.w_x"),
                        xavier(&mut rng, vec![4 * h, e], e, 4 * h),
                    );
                    params.insert(
                        &format!("lstm.{dir}.w_h"),
                        xavier(&mut rng, vec![4 * h, h], h, 4 * h),
                    );
                    let mut bias = Tensor::zeros(vec![4 * h]);
                    bias.values_mut()[h..2 * h].fill(1.0); // forget gate
                    params.insert(&format!("lstm.{dir}.b"), bias);
                }
            }
            EncoderKind::Cnn => {
                let f = config.filters_per_kernel();
                for &k in &config.kernel_sizes {
                    params.insert(
                        &format!("cnn.k{k}.w"),
                        xavier(&mut rng, vec![k, e, f], k * e, k * f),
                    );
                    params.insert(&format!("cnn.k{k}.b"), Tensor::zeros(vec![f]));
                }
            }
            EncoderKind::Projection => {
                params.insert("proj.w", xavier(&mut rng, vec![e, hd], e, hd));
                params.insert("proj.b", Tensor::zeros(vec![hd]));
            }
        }

        if config.attention == AttentionKind::Additive {
            let da = config.attention_dim;
            params.insert("attn.w1", xavier(&mut rng, vec![hd, da], hd, da));
            params.insert("attn.b", Tensor::zeros(vec![da]));
            params.insert("attn.v", xavier(&mut rng, vec![da], da, 1));
        }

        params.insert(
            "dec.w",
            xavier(&mut rng, vec![config.label_count, hd], hd, config.label_count),
        );
        params.insert("dec.b", Tensor::zeros(vec![config.label_count]));

        Ok(Model {
            config,
            params,
            vocab_fingerprint: vocab.fingerprint(),
        })
    }

    /// The learned attention parameters, when the model has them.
    pub fn attention_params(&self) -> Option<AttentionParams> {
        Some(AttentionParams {
            w1: self.params.get("attn.w1")?.clone(),
            b: self.params.get("attn.b")?.clone(),
            v: self.params.get("attn.v")?.clone(),
        })
    }

    pub fn forward(&self, doc: &Document) -> Result<ModelOutput> {
        Ok(self.forward_traced(doc, None)?.0)
    }

    pub fn forward_with_override(
        &self,
        doc: &Document,
        alpha: &AttentionOverride,
    ) -> Result<ModelOutput> {
        Ok(self.forward_traced(doc, Some(alpha))?.0)
    }

    /// Runs the forward pass on a fresh tape. With an override present the
    /// attention parameters are never read; the override is renormalized over
    /// unmasked positions and injected in place of the learned distribution.
    pub fn forward_traced(
        &self,
        doc: &Document,
        alpha_override: Option<&AttentionOverride>,
    ) -> Result<(ModelOutput, Trace)> {
        if doc.tokens.is_empty() {
            return Err(Error::InvalidInput(format!("document {} is empty", doc.id)));
        }
        let t_len = doc.tokens.len();
        let mask: Vec<bool> = doc.tokens.iter().map(|&t| t != PAD_INDEX).collect();
        if mask.iter().all(|m| !m) {
            return Err(Error::AllMasked);
        }

        let mut tape = Tape::new();
        let mut binding = TapeBinding::new();
        let table = binding.param(&mut tape, &self.params, "embedding")?;
        let lookup = tape.embedding_lookup(table, &doc.tokens)?;
        let hidden = encoders::encode(&self.config, &mut tape, &mut binding, &self.params, lookup, t_len)?;

        let l_count = self.config.label_count;
        let (alpha_used, contexts): (Vec<Vec<f64>>, Vec<Var>) = match alpha_override {
            Some(AttentionOverride::Shared(raw)) => {
                let alpha = normalize_override(raw, &mask)?;
                let alpha_var = tape.leaf(Tensor::vector(alpha.clone()))?;
                let ctx = tape.matmul(alpha_var, hidden)?;
                (vec![alpha], vec![ctx; l_count])
            }
            Some(AttentionOverride::PerLabel(rows)) => {
                if rows.len() != l_count {
                    return Err(Error::InvalidInput(format!(
                        "{} override rows for {} labels",
                        rows.len(),
                        l_count
                    )));
                }
                let mut alphas = Vec::with_capacity(l_count);
                let mut ctxs = Vec::with_capacity(l_count);
                for raw in rows {
                    let alpha = normalize_override(raw, &mask)?;
                    let alpha_var = tape.leaf(Tensor::vector(alpha.clone()))?;
                    ctxs.push(tape.matmul(alpha_var, hidden)?);
                    alphas.push(alpha);
                }
                (alphas, ctxs)
            }
            None => {
                let (alpha_var, alpha) = self.learned_attention(&mut tape, &mut binding, hidden, &mask)?;
                let ctx = match (self.config.attention, self.config.pooling) {
                    (AttentionKind::None, PoolingKind::FinalState) => {
                        self.final_state_context(&mut tape, hidden, &mask)?
                    }
                    _ => tape.matmul(alpha_var, hidden)?,
                };
                (vec![alpha], vec![ctx; l_count])
            }
        };

        // Decoder: shared context takes the matrix path; per-label contexts
        // score against their own decoder row.
        let yhat = if contexts.windows(2).all(|w| w[0] == w[1]) {
            let theta = binding.param(&mut tape, &self.params, "dec.w")?;
            let bias = binding.param(&mut tape, &self.params, "dec.b")?;
            let scores = tape.matmul(theta, contexts[0])?;
            let scores = tape.add(scores, bias)?;
            tape.sigmoid(scores)?
        } else {
            let theta = binding.param(&mut tape, &self.params, "dec.w")?;
            let bias = binding.param(&mut tape, &self.params, "dec.b")?;
            let mut per_label = Vec::with_capacity(l_count);
            for (l, &ctx) in contexts.iter().enumerate() {
                let row = tape.slice_row(theta, l)?;
                let prod = tape.hadamard(row, ctx)?;
                let score = tape.sum(prod)?;
                let b = tape.slice(bias, l, 1)?;
                let score = tape.add(score, b)?;
                per_label.push(tape.sigmoid(score)?);
            }
            tape.concat_last(&per_label)?
        };

        let attention = if alpha_used.len() == 1 {
            alpha_used[0].clone()
        } else {
            let n = alpha_used.len() as f64;
            (0..t_len)
                .map(|t| alpha_used.iter().map(|a| a[t]).sum::<f64>() / n)
                .collect()
        };
        let output = ModelOutput {
            hidden: tape.value(hidden).clone(),
            attention,
            context: tape.value(contexts[0]).values().to_vec(),
            prediction: tape.value(yhat).values().to_vec(),
        };
        let trace = Trace {
            tape,
            binding,
            lookup,
            hidden,
            yhat,
        };
        Ok((output, trace))
    }

    fn learned_attention(
        &self,
        tape: &mut Tape,
        binding: &mut TapeBinding,
        hidden: Var,
        mask: &[bool],
    ) -> Result<(Var, Vec<f64>)> {
        match self.config.attention {
            AttentionKind::Additive => {
                let w1 = binding.param(tape, &self.params, "attn.w1")?;
                let b = binding.param(tape, &self.params, "attn.b")?;
                let v = binding.param(tape, &self.params, "attn.v")?;
                let scores = tape.matmul(hidden, w1)?;
                let scores = tape.add(scores, b)?;
                let scores = tape.tanh(scores)?;
                let scores = tape.matmul(scores, v)?;
                let alpha = tape.softmax_masked(scores, Some(mask))?;
                let values = tape.value(alpha).values().to_vec();
                Ok((alpha, values))
            }
            AttentionKind::None => {
                let unmasked = mask.iter().filter(|&&m| m).count();
                let weights: Vec<f64> = mask
                    .iter()
                    .map(|&m| if m { 1.0 / unmasked as f64 } else { 0.0 })
                    .collect();
                let alpha = tape.leaf(Tensor::vector(weights.clone()))?;
                Ok((alpha, weights))
            }
            AttentionKind::FrozenExternal => Err(Error::InvalidConfig(
                "frozen-external attention requires an override distribution".into(),
            )),
        }
    }

    /// Final-state pooling: the forward direction's last unmasked state and,
    /// for the BiLSTM, the backward direction's first unmasked state.
    fn final_state_context(&self, tape: &mut Tape, hidden: Var, mask: &[bool]) -> Result<Var> {
        let last = mask.iter().rposition(|&m| m).ok_or(Error::AllMasked)?;
        match self.config.kind {
            EncoderKind::Bilstm => {
                let first = mask.iter().position(|&m| m).ok_or(Error::AllMasked)?;
                let h = self.config.direction_size();
                let last_row = tape.slice_row(hidden, last)?;
                let fwd = tape.slice(last_row, 0, h)?;
                let first_row = tape.slice_row(hidden, first)?;
                let bwd = tape.slice(first_row, h, h)?;
                tape.concat_last(&[fwd, bwd])
            }
            _ => tape.slice_row(hidden, last),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format_version: 1,
            config: self.config.clone(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            params: self
                .params
                .names()
                .map(|n| (n.to_string(), self.params.get(n).expect("named").clone()))
                .collect(),
        };
        let out = std::fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(out), &file)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let file: ModelFile =
            serde_json::from_reader(BufReader::new(std::fs::File::open(path)?))?;
        if file.format_version != 1 {
            return Err(Error::FormatVersion(file.format_version));
        }
        file.config.validate()?;
        let mut params = ParameterStore::new();
        for (name, tensor) in file.params {
            tensor.ensure_finite(&name)?;
            params.insert(&name, tensor);
        }
        Ok(Model {
            config: file.config,
            params,
            vocab_fingerprint: file.vocab_fingerprint,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    config: EncoderConfig,
    vocab_fingerprint: String,
    params: std::collections::BTreeMap<String, Tensor>,
}

/// Validates an override and renormalizes it over the unmasked positions.
/// A distribution already summing to 1 within 1e-9 is used as-is, so
/// re-injecting a model's own attention reproduces its output bit-exactly.
fn normalize_override(raw: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if raw.len() != mask.len() {
        return Err(Error::ShapeMismatch {
            op: "attention-override",
            detail: format!("override length {} vs {} positions", raw.len(), mask.len()),
        });
    }
    if raw.iter().any(|&a| !a.is_finite() || a < 0.0) {
        return Err(Error::NotNormalized {
            sum: raw.iter().sum(),
        });
    }
    let mut alpha: Vec<f64> = raw
        .iter()
        .zip(mask)
        .map(|(&a, &m)| if m { a } else { 0.0 })
        .collect();
    let sum = fsum(alpha.iter().copied());
    if sum <= 0.0 {
        return Err(Error::NotNormalized { sum });
    }
    if (sum - 1.0).abs() > 1e-9 {
        for a in &mut alpha {
            *a /= sum;
        }
    }
    Ok(alpha)
}

/// Symmetric scaled uniform init over ±sqrt(6 / (fan_in + fan_out)).
fn xavier(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, values).expect("shape and value count agree")
}

#[cfg(test)]
mod tests;
