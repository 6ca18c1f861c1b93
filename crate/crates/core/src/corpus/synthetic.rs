//! Synthetic planted-signal corpus.
//!
//! Documents are uniform draws over filler words; positive documents carry
//! one trigger word at a uniformly random position. The label is a function
//! of trigger presence, so the corpus has ground-truth token relevance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::text::{NUM, PAD, UNK};
use super::{Dataset, RawDocument, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// One binary label: positive iff any trigger word is present.
    AnyTrigger,
    /// One label per trigger word: label `j` is the presence of trigger `j`.
    PerTrigger,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub doc_len: usize,
    /// Total vocabulary size including the three reserved tokens.
    pub vocab_size: usize,
    pub trigger_words: Vec<String>,
    #[serde(default = "default_rule")]
    pub label_rule: LabelRule,
    pub seed: u64,
}

fn default_rule() -> LabelRule {
    LabelRule::AnyTrigger
}

const RESERVED_COUNT: usize = 3;

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.n_docs == 0 || self.doc_len == 0 {
            return Err(Error::InvalidConfig(
                "n_docs and doc_len must be positive".into(),
            ));
        }
        if self.trigger_words.is_empty() {
            return Err(Error::InvalidConfig("need at least one trigger word".into()));
        }
        if self.vocab_size <= self.trigger_words.len() + RESERVED_COUNT {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} leaves no filler words after {} triggers and {} reserved tokens",
                self.vocab_size,
                self.trigger_words.len(),
                RESERVED_COUNT
            )));
        }
        for word in &self.trigger_words {
            let lower = word.to_lowercase();
            let clean = lower == *word
                && !word.is_empty()
                && word.chars().all(|c| c.is_alphanumeric() && !c.is_numeric());
            if !clean || [PAD, UNK, NUM].contains(&word.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "trigger word {word:?} must be lowercase alphabetic and not reserved"
                )));
            }
        }
        Ok(())
    }
}

/// Generates the corpus. Split assignment is 70/10/20 by document index;
/// everything is deterministic under `config.seed`.
pub fn generate_synthetic_corpus(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let filler_count = config.vocab_size - RESERVED_COUNT - config.trigger_words.len();
    // Filler names must stay digit-free or normalization would fold them
    // all into `qqq`.
    let fillers: Vec<String> = (0..filler_count).map(alpha_name).collect();

    let n_train = config.n_docs * 7 / 10;
    let n_dev = config.n_docs / 10;

    let label_count = match config.label_rule {
        LabelRule::AnyTrigger => 1,
        LabelRule::PerTrigger => config.trigger_words.len(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut raw = Vec::with_capacity(config.n_docs);
    for i in 0..config.n_docs {
        let positive = rng.gen_bool(0.5);
        let mut tokens: Vec<String> = (0..config.doc_len)
            .map(|_| fillers[rng.gen_range(0..filler_count)].clone())
            .collect();
        let mut labels = vec![0u8; label_count];
        if positive {
            let which = rng.gen_range(0..config.trigger_words.len());
            let pos = rng.gen_range(0..config.doc_len);
            tokens[pos] = config.trigger_words[which].clone();
            match config.label_rule {
                LabelRule::AnyTrigger => labels[0] = 1,
                LabelRule::PerTrigger => labels[which] = 1,
            }
        }
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        raw.push(RawDocument {
            id: format!("syn-{i:05}"),
            tokens,
            labels,
            split,
        });
    }
    Dataset::assemble(raw, 1)
}

/// Letter-only word for filler index `i`: `xaa`, `xab`, ..., `xba`, ...
fn alpha_name(mut i: usize) -> String {
    let mut suffix = Vec::new();
    loop {
        suffix.push(b'a' + (i % 26) as u8);
        i /= 26;
        if i == 0 {
            break;
        }
        i -= 1;
    }
    suffix.reverse();
    let mut name = String::from("x");
    name.push_str(std::str::from_utf8(&suffix).expect("ascii"));
    name
}
