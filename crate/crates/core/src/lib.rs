//! Small attention-based text classifiers and an audit battery that probes
//! whether their attention weights behave like explanations.
//!
//! The crate is organized around a pipeline:
//!
//! - [`corpus`] — tokenization, vocabularies, embeddings, dataset loading and
//!   a synthetic planted-signal corpus generator.
//! - [`tensor`] — a dense-`f64` tensor type with a reverse-mode gradient tape
//!   covering exactly the primitives the models need.
//! - [`models`] — three encoders (BiLSTM / CNN / embedding projection) with an
//!   additive attention layer and a sigmoid decoder, supporting attention-free
//!   pooling and externally supplied attention distributions.
//! - [`train`] — Adam + L2 maximum-likelihood training with AUC evaluation.
//! - [`lr`] — a bag-of-words logistic regression baseline and the log-odds
//!   attention distribution derived from its coefficients.
//! - [`audit`] — gradient correlation, permutation and adversarial attention
//!   counterfactuals, and log-odds attention substitution.
//! - [`report`] — static SVG scatter plots, token heatmaps and summary tables
//!   rendered from audit output files.

pub mod audit;
pub mod corpus;
pub mod hashes;
pub mod error;
pub mod lr;
pub mod models;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
