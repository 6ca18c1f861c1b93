//! Tokenization, token normalization and vocabulary construction.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::hashes::sha256_hex;

/// Padding token; always index 0, embedding pinned to zero by the models.
pub const PAD: &str = "<pad>";
/// Out-of-vocabulary token; always index 1.
pub const UNK: &str = "<unk>";
/// Replacement for any token containing a numeric character; always index 2.
pub const NUM: &str = "qqq";

const RESERVED: [&str; 3] = [PAD, UNK, NUM];

/// Rule tokenizer: lowercase, split on whitespace, and break punctuation
/// (anything neither alphanumeric nor whitespace) into standalone tokens.
/// Empty input yields an empty sequence.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Bijective word/index table with the three reserved tokens at the front.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    word_to_index: HashMap<String, usize>,
    words: Vec<String>,
}

impl Vocabulary {
    fn with_reserved() -> Self {
        let mut vocab = Vocabulary {
            word_to_index: HashMap::new(),
            words: Vec::new(),
        };
        for word in RESERVED {
            vocab.push(word.to_string());
        }
        vocab
    }

    fn push(&mut self, word: String) {
        self.word_to_index.insert(word.clone(), self.words.len());
        self.words.push(word);
    }

    /// Builds a vocabulary from pre-tokenized training documents. Words are
    /// ordered by descending count, ties broken lexicographically, after the
    /// reserved tokens. Tokens containing digits count as `qqq` and reserved
    /// spellings are never duplicated.
    pub fn build_from_tokens<S: AsRef<str>>(docs: &[Vec<S>], min_count: usize) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for token in doc {
                let token = token.as_ref();
                if has_digit(token) || RESERVED.contains(&token) {
                    continue;
                }
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut ordered: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut vocab = Vocabulary::with_reserved();
        for (word, _) in ordered {
            vocab.push(word.to_string());
        }
        Ok(vocab)
    }

    /// Builds a vocabulary from raw training texts via [`tokenize`].
    pub fn build<S: AsRef<str>>(texts: &[S], min_count: usize) -> Result<Self> {
        let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t.as_ref())).collect();
        Self::build_from_tokens(&docs, min_count)
    }

    /// Restores a vocabulary from a dumped word list. The reserved tokens
    /// must occupy their fixed leading positions.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < RESERVED.len()
            || RESERVED
                .iter()
                .zip(&words)
                .any(|(expect, got)| expect != got)
        {
            return Err(Error::InvalidInput(
                "word list does not start with the reserved tokens".into(),
            ));
        }
        let mut vocab = Vocabulary {
            word_to_index: HashMap::new(),
            words: Vec::new(),
        };
        for word in words {
            if vocab.word_to_index.contains_key(&word) {
                return Err(Error::InvalidInput(format!("duplicate word {word:?}")));
            }
            vocab.push(word);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pad_index(&self) -> usize {
        0
    }

    pub fn unk_index(&self) -> usize {
        1
    }

    pub fn num_index(&self) -> usize {
        2
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.word_to_index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Maps a token to its index: any token containing a digit goes to
    /// `qqq`, unknown tokens go to `<unk>`.
    pub fn normalize_token(&self, token: &str) -> usize {
        if has_digit(token) {
            return self.num_index();
        }
        self.index_of(token).unwrap_or_else(|| self.unk_index())
    }

    /// Tokenizes and normalizes a raw text into index form.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .iter()
            .map(|t| self.normalize_token(t))
            .collect()
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.normalize_token(t.as_ref()))
            .collect()
    }

    pub fn decode<'a>(&'a self, indices: &[usize]) -> Vec<&'a str> {
        indices.iter().map(|&i| self.word(i)).collect()
    }

    /// Stable fingerprint of the exact word order.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.words.join("\n").as_bytes())
    }

    /// Dumps the word list as a JSON array in index order.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(&self.words)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let words: Vec<String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_words(words)
    }
}

fn has_digit(token: &str) -> bool {
    token.chars().any(|c| c.is_numeric())
}
