//! Run configuration: a single JSON file describing the data source, model,
//! training and audit settings. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use attnaudit::audit::{AdversarialConfig, GradientMeasure};
use attnaudit::corpus::SyntheticConfig;
use attnaudit::lr::LrConfig;
use attnaudit::models::{EncoderConfig, EncoderKind};
use attnaudit::train::TrainConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum DataSource {
    /// Generate a planted-signal corpus.
    Synthetic(SyntheticConfig),
    /// Load an existing JSONL dataset.
    Jsonl(PathBuf),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSettings {
    pub n_perms: usize,
    pub adversarial: AdversarialConfig,
    pub grad_measure: GradientMeasure,
    /// Use |beta| (the default) or signed coefficients for log-odds scores.
    pub logodds_abs: bool,
    /// Cap on audited test instances; null audits the whole split.
    pub max_instances: Option<usize>,
    pub jobs: usize,
}

impl Default for AuditSettings {
    fn default() -> Self {
        AuditSettings {
            n_perms: 100,
            adversarial: AdversarialConfig::default(),
            grad_measure: GradientMeasure::GradTimesInput,
            logodds_abs: true,
            max_instances: None,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSource,
    /// Optional pretrained embedding file ("none"/null means Gaussian init).
    pub embeddings: Option<PathBuf>,
    pub min_count: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub lr: LrConfig,
    pub audit: AuditSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataSource::Synthetic(SyntheticConfig {
                n_docs: 2000,
                doc_len: 200,
                vocab_size: 100,
                trigger_words: vec!["zephyr".into()],
                label_rule: attnaudit::corpus::LabelRule::AnyTrigger,
                seed: 0,
            }),
            embeddings: None,
            min_count: 1,
            encoder: EncoderConfig {
                embedding_dim: 32,
                hidden_size: 32,
                attention_dim: 16,
                ..EncoderConfig::new(EncoderKind::Bilstm)
            },
            train: TrainConfig {
                max_epochs: 8,
                patience: 3,
                ..TrainConfig::default()
            },
            lr: LrConfig::default(),
            audit: AuditSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.encoder
            .validate()
            .context("encoder configuration")?;
        self.train.validate().context("train configuration")?;
        if self.min_count == 0 {
            bail!("min_count must be at least 1");
        }
        if self.audit.n_perms == 0 {
            bail!("audit.n_perms must be positive");
        }
        if self.audit.adversarial.epsilon <= 0.0 {
            bail!("audit.adversarial.epsilon must be positive");
        }
        if self.audit.adversarial.restarts == 0 {
            bail!("audit.adversarial.restarts must be at least 1");
        }
        Ok(())
    }

    /// Stable hash of the run settings. The output directory is excluded so
    /// the same run written to two locations fingerprints identically.
    pub fn fingerprint(&self) -> String {
        let mut clone = self.clone();
        clone.out = PathBuf::new();
        let json = serde_json::to_string(&clone).expect("config serializes");
        attnaudit::hashes::sha256_hex(json.as_bytes())
    }
}
