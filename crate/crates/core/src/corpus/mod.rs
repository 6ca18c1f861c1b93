//! Dataset ingestion: tokenization, vocabularies, embeddings, JSONL loading
//! and a synthetic planted-signal corpus for desk-scale validation.
//!
//! Everything here is built single-threaded and deterministically; the
//! resulting values are immutable and safe to share across threads.

mod embedding;
mod jsonl;
mod synthetic;
mod text;

pub use embedding::{load_embeddings, EmbeddingMatrix, RowProvenance};
pub use jsonl::load_jsonl;
pub use synthetic::{generate_synthetic_corpus, LabelRule, SyntheticConfig};
pub use text::{tokenize, Vocabulary, NUM, PAD, UNK};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Dev => write!(f, "dev"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One tokenized, label-carrying instance.
#[derive(Clone, Debug)]
pub struct Document {
    pub id: String,
    /// Token indices into the dataset vocabulary; never empty.
    pub tokens: Vec<usize>,
    /// One 0/1 entry per label.
    pub labels: Vec<u8>,
    pub split: Split,
}

/// A document collection with its vocabulary and label arity.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub documents: Vec<Document>,
    pub label_count: usize,
    pub vocabulary: Vocabulary,
}

/// A not-yet-encoded document, as produced by the loaders.
#[derive(Clone, Debug)]
pub(crate) struct RawDocument {
    pub id: String,
    pub tokens: Vec<String>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    /// Builds the vocabulary from the train split and encodes every document.
    pub(crate) fn assemble(raw: Vec<RawDocument>, min_count: usize) -> Result<Dataset> {
        let train_tokens: Vec<Vec<String>> = raw
            .iter()
            .filter(|d| d.split == Split::Train)
            .map(|d| d.tokens.clone())
            .collect();
        let vocabulary = Vocabulary::build_from_tokens(&train_tokens, min_count)?;
        let label_count = raw.first().map_or(0, |d| d.labels.len());

        let documents = raw
            .into_iter()
            .map(|d| Document {
                id: d.id,
                tokens: vocabulary.encode_tokens(&d.tokens),
                labels: d.labels,
                split: d.split,
            })
            .collect();
        Ok(Dataset {
            documents,
            label_count,
            vocabulary,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(move |d| d.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Errors unless every label has both a positive and a negative example
    /// in the train split.
    pub fn check_train_classes(&self) -> Result<()> {
        for label in 0..self.label_count {
            let mut pos = false;
            let mut neg = false;
            for doc in self.split(Split::Train) {
                match doc.labels[label] {
                    0 => neg = true,
                    _ => pos = true,
                }
                if pos && neg {
                    break;
                }
            }
            if !(pos && neg) {
                return Err(Error::SingleClass { label });
            }
        }
        Ok(())
    }

    /// Writes the dataset back out in the JSONL interchange format, decoding
    /// tokens through the vocabulary.
    pub fn write_jsonl(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for doc in &self.documents {
            let text = self.vocabulary.decode(&doc.tokens).join(" ");
            let line = serde_json::json!({
                "id": doc.id,
                "text": text,
                "labels": doc.labels,
                "split": doc.split,
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}
