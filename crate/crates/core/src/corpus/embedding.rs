//! Word embedding loading and Gaussian initialization.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::text::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowProvenance {
    Pretrained,
    GaussianInit,
}

/// A `|V| x E` embedding table with per-row provenance.
#[derive(Clone, Debug)]
pub struct EmbeddingMatrix {
    pub values: Tensor,
    pub provenance: Vec<RowProvenance>,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.values.shape()[0]
    }
}

/// Loads pretrained vectors for the vocabulary. Rows found in the file are
/// copied verbatim; rows for absent words (and all rows when `path` is
/// `None`) are drawn independently from a standard Gaussian, deterministic
/// under `seed`.
///
/// The file is whitespace-separated text, one `word v1 .. vE` row per line.
/// A first line with exactly two integer fields is treated as a `count dim`
/// header and skipped.
pub fn load_embeddings(
    path: Option<&Path>,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    let mut pretrained: HashMap<String, Vec<f64>> = HashMap::new();
    if let Some(path) = path {
        let display = path.display().to_string();
        let reader = BufReader::new(std::fs::File::open(path)?);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if lineno == 1 && fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok())
            {
                continue;
            }
            if fields.len() != dim + 1 {
                return Err(Error::MalformedLine {
                    path: display,
                    line: lineno,
                    reason: format!("expected {} fields, found {}", dim + 1, fields.len()),
                });
            }
            let mut row = Vec::with_capacity(dim);
            for field in &fields[1..] {
                row.push(field.parse::<f64>().map_err(|_| Error::MalformedLine {
                    path: display.clone(),
                    line: lineno,
                    reason: format!("non-numeric value {field:?}"),
                })?);
            }
            // Last occurrence wins for duplicate words.
            pretrained.insert(fields[0].to_string(), row);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(vocab.len() * dim);
    let mut provenance = Vec::with_capacity(vocab.len());
    for index in 0..vocab.len() {
        match pretrained.get(vocab.word(index)) {
            Some(row) => {
                values.extend_from_slice(row);
                provenance.push(RowProvenance::Pretrained);
            }
            None => {
                values.extend((0..dim).map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    x
                }));
                provenance.push(RowProvenance::GaussianInit);
            }
        }
    }
    let values = Tensor::matrix(vocab.len(), dim, values)?;
    values.ensure_finite("embedding matrix")?;
    Ok(EmbeddingMatrix { values, provenance })
}
