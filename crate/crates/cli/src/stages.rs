//! Pipeline stages. Each stage reads files produced by earlier stages, writes
//! its own outputs under the run directory, and records a stage manifest with
//! the resolved-config hash and the hashes of everything it read and wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use attnaudit::audit::{self, jsd};
use attnaudit::corpus::{self, Dataset, Document, Split};
use attnaudit::hashes::{sha256_file, sha256_hex, stage_seed};
use attnaudit::lr::{self, LogOddsTable, LrModel};
use attnaudit::models::{AttentionKind, Model};
use attnaudit::report::{self, HeatmapDoc, ScatterSpec, SummaryRow};
use attnaudit::train::{self, EvalResult};

use crate::config::{DataSource, RunConfig};

pub struct Ctx {
    pub config: RunConfig,
}

const LN_2: f64 = std::f64::consts::LN_2;

impl Ctx {
    pub fn new(config: RunConfig) -> Result<Self> {
        std::fs::create_dir_all(&config.out)
            .with_context(|| format!("creating output directory {}", config.out.display()))?;
        Ok(Ctx { config })
    }

    fn out(&self) -> &Path {
        &self.config.out
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out().join(name)
    }

    fn seed_for(&self, stage: &str) -> u64 {
        stage_seed(self.config.seed, stage)
    }

    fn dataset_path(&self) -> PathBuf {
        match &self.config.data {
            DataSource::Jsonl(path) => path.clone(),
            DataSource::Synthetic(_) => self.path("dataset.jsonl"),
        }
    }

    fn load_dataset(&self) -> Result<Dataset> {
        let path = self.dataset_path();
        if !path.exists() {
            bail!(
                "dataset {} not found; run the gen-data stage first",
                path.display()
            );
        }
        Ok(corpus::load_jsonl(&path, self.config.min_count)?)
    }

    fn test_docs<'d>(&self, data: &'d Dataset) -> Vec<&'d Document> {
        let docs: Vec<&Document> = data.split(Split::Test).collect();
        match self.config.audit.max_instances {
            Some(cap) => docs.into_iter().take(cap).collect(),
            None => docs,
        }
    }

    fn write_stage_manifest(
        &self,
        stage: &str,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<()> {
        let relative = |p: &PathBuf| {
            p.strip_prefix(self.out())
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/")
        };
        let hash_map = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            let mut map = BTreeMap::new();
            for p in paths {
                map.insert(relative(p), sha256_file(p)?);
            }
            Ok(map)
        };
        let manifest = StageManifest {
            format_version: 1,
            stage: stage.to_string(),
            seed: self.seed_for(stage),
            config_hash: self.config.fingerprint(),
            inputs: hash_map(inputs)?,
            outputs: hash_map(outputs)?,
        };
        let path = self.path(&format!("{stage}.manifest.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct StageManifest {
    format_version: u32,
    stage: String,
    seed: u64,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

/// Evaluation of a named model variant on the test split.
#[derive(Serialize, Deserialize)]
struct VariantEval {
    variant: String,
    test_split_hash: String,
    #[serde(flatten)]
    eval: EvalResult,
}

fn test_split_hash(data: &Dataset) -> String {
    let ids: Vec<&str> = data.split(Split::Test).map(|d| d.id.as_str()).collect();
    sha256_hex(ids.join("\n").as_bytes())
}

fn write_variant_eval(
    ctx: &Ctx,
    variant: &str,
    data: &Dataset,
    eval: EvalResult,
) -> Result<PathBuf> {
    let path = ctx.path(&format!("eval_{}.json", variant.replace('-', "_")));
    let record = VariantEval {
        variant: variant.to_string(),
        test_split_hash: test_split_hash(data),
        eval,
    };
    std::fs::write(&path, serde_json::to_string_pretty(&record)?)?;
    Ok(path)
}

pub fn gen_data(ctx: &Ctx) -> Result<()> {
    let DataSource::Synthetic(synth) = &ctx.config.data else {
        bail!("gen-data requires a synthetic data source in the config");
    };
    let mut synth = synth.clone();
    synth.seed = ctx.seed_for("gen-data") ^ synth.seed;
    let data = corpus::generate_synthetic_corpus(&synth)?;
    let dataset_path = ctx.path("dataset.jsonl");
    data.write_jsonl(&dataset_path)?;
    let vocab_path = ctx.path("vocab.json");
    data.vocabulary.save(&vocab_path)?;
    ctx.write_stage_manifest("gen-data", &[], &[dataset_path, vocab_path])?;
    Ok(())
}

pub fn build_vocab(ctx: &Ctx) -> Result<()> {
    let data = ctx.load_dataset()?;
    let vocab_path = ctx.path("vocab.json");
    data.vocabulary.save(&vocab_path)?;
    ctx.write_stage_manifest("build-vocab", &[ctx.dataset_path()], &[vocab_path])?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum TrainVariant {
    Attentive,
    Inattentive,
}

impl TrainVariant {
    fn name(self) -> &'static str {
        match self {
            TrainVariant::Attentive => "attentive",
            TrainVariant::Inattentive => "inattentive",
        }
    }
}

fn load_embeddings_for(ctx: &Ctx, data: &Dataset) -> Result<corpus::EmbeddingMatrix> {
    Ok(corpus::load_embeddings(
        ctx.config.embeddings.as_deref(),
        &data.vocabulary,
        ctx.config.encoder.embedding_dim,
        ctx.seed_for("embeddings"),
    )?)
}

pub fn train_model(ctx: &Ctx, variant: TrainVariant) -> Result<()> {
    let data = ctx.load_dataset()?;
    let embeddings = load_embeddings_for(ctx, &data)?;

    let mut encoder = ctx.config.encoder.clone();
    encoder.label_count = data.label_count;
    encoder.attention = match variant {
        TrainVariant::Attentive => AttentionKind::Additive,
        TrainVariant::Inattentive => AttentionKind::None,
    };
    let name = variant.name();
    let mut model = Model::new(
        encoder,
        &embeddings,
        &data.vocabulary,
        ctx.seed_for(&format!("model-init:{name}")),
    )?;
    let mut train_config = ctx.config.train.clone();
    train_config.seed = ctx.seed_for(&format!("train:{name}"));
    let log = train::train(&mut model, &data, &train_config, None)?;

    let model_path = ctx.path(&format!("model_{name}.json"));
    model.save(&model_path)?;
    let log_path = ctx.path(&format!("train_{name}.csv"));
    log.write_csv(&log_path)?;
    let eval = train::evaluate(&model, &ctx.test_docs(&data), None)?;
    let eval_path = write_variant_eval(ctx, name, &data, eval)?;

    let mut inputs = vec![ctx.dataset_path()];
    if let Some(emb) = &ctx.config.embeddings {
        inputs.push(emb.clone());
    }
    ctx.write_stage_manifest(
        &format!("train-{name}"),
        &inputs,
        &[model_path, log_path, eval_path],
    )?;
    Ok(())
}

pub fn train_lr_stage(ctx: &Ctx) -> Result<()> {
    let data = ctx.load_dataset()?;
    let model = lr::train_lr(&data, &ctx.config.lr)?;

    let model_path = ctx.path("lr_model.json");
    model.save(&model_path)?;
    let table = LogOddsTable::from_model(&model);
    let table_path = ctx.path("logodds_table.csv");
    table.write_csv(&data.vocabulary, &table_path)?;

    // LR scores on the test split for the summary table.
    let docs = ctx.test_docs(&data);
    let mut per_label = Vec::new();
    let mut positives = Vec::new();
    for label in 0..data.label_count {
        let scores: Vec<f64> = docs
            .iter()
            .map(|d| model.predict(&lr::featurize_bow(d))[label])
            .collect();
        let labels: Vec<u8> = docs.iter().map(|d| d.labels[label]).collect();
        per_label.push(train::auc(&scores, &labels)?);
        positives.push(labels.iter().filter(|&&y| y == 1).count());
    }
    let eval = EvalResult {
        macro_auc: per_label.iter().sum::<f64>() / per_label.len() as f64,
        per_label_auc: per_label,
        positive_counts: positives,
    };
    let eval_path = write_variant_eval(ctx, "lr", &data, eval)?;

    ctx.write_stage_manifest(
        "train-lr",
        &[ctx.dataset_path()],
        &[model_path, table_path, eval_path],
    )?;
    Ok(())
}

fn load_lr_table(ctx: &Ctx) -> Result<LogOddsTable> {
    let path = ctx.path("lr_model.json");
    if !path.exists() {
        bail!(
            "LR model {} not found; run the train-lr stage first",
            path.display()
        );
    }
    Ok(LogOddsTable::from_model(&LrModel::load(&path)?))
}

pub fn train_logodds_stage(ctx: &Ctx) -> Result<()> {
    let data = ctx.load_dataset()?;
    let table = load_lr_table(ctx)?;
    let embeddings = load_embeddings_for(ctx, &data)?;
    let mut encoder = ctx.config.encoder.clone();
    encoder.label_count = data.label_count;

    let mut train_config = ctx.config.train.clone();
    train_config.seed = ctx.seed_for("train:logodds");
    let (model, log) = audit::train_with_frozen_logodds(
        &data,
        &table,
        &encoder,
        &train_config,
        &embeddings,
        ctx.seed_for("model-init:logodds"),
        ctx.config.audit.logodds_abs,
    )?;

    let model_path = ctx.path("model_logodds.json");
    model.save(&model_path)?;
    let log_path = ctx.path("train_logodds.csv");
    log.write_csv(&log_path)?;
    let eval = audit::evaluate_with_logodds(
        &model,
        &ctx.test_docs(&data),
        &table,
        ctx.config.audit.logodds_abs,
    )?;
    let eval_path = write_variant_eval(ctx, "logodds-trained", &data, eval)?;

    ctx.write_stage_manifest(
        "train-logodds",
        &[ctx.dataset_path(), ctx.path("lr_model.json")],
        &[model_path, log_path, eval_path],
    )?;
    Ok(())
}

fn load_attentive_model(ctx: &Ctx) -> Result<Model> {
    let path = ctx.path("model_attentive.json");
    if !path.exists() {
        bail!(
            "model {} not found; run the train stage first",
            path.display()
        );
    }
    Ok(Model::load(&path)?)
}

fn audit_dir(ctx: &Ctx) -> Result<PathBuf> {
    let dir = ctx.path("audit");
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum AuditKind {
    Gradients,
    Permute,
    Adversarial,
    Logodds,
}

pub fn audit_stage(ctx: &Ctx, kind: AuditKind) -> Result<()> {
    let data = ctx.load_dataset()?;
    let model = load_attentive_model(ctx)?;
    if model.vocab_fingerprint != data.vocabulary.fingerprint() {
        bail!("model was trained on a different vocabulary than the dataset");
    }
    let docs = ctx.test_docs(&data);
    let dir = audit_dir(ctx)?;
    let jobs = ctx.config.audit.jobs;

    match kind {
        AuditKind::Gradients => {
            let records = audit::run_gradient_audit(
                &model,
                &docs,
                ctx.config.audit.grad_measure,
                jobs,
            )?;
            let csv = dir.join("gradients.csv");
            audit::write_gradient_csv(&records, &csv)?;
            ctx.write_stage_manifest(
                "audit-gradients",
                &[ctx.dataset_path(), ctx.path("model_attentive.json")],
                &[csv],
            )?;
        }
        AuditKind::Permute => {
            let records = audit::run_permutation_audit(
                &model,
                &docs,
                ctx.config.audit.n_perms,
                ctx.seed_for("audit:permute"),
                jobs,
            )?;
            let csv = dir.join("permute.csv");
            audit::write_permutation_csv(&records, &csv)?;
            ctx.write_stage_manifest(
                "audit-permute",
                &[ctx.dataset_path(), ctx.path("model_attentive.json")],
                &[csv],
            )?;
        }
        AuditKind::Adversarial => {
            let config = ctx.config.audit.adversarial.clone();
            let records = audit::run_adversarial_audit(
                &model,
                &docs,
                &config,
                ctx.seed_for("audit:adversarial"),
                jobs,
            )?;
            let csv = dir.join("adversarial.csv");
            audit::write_adversarial_csv(&records, &csv)?;
            let sidecar = dir.join("adversarial.jsonl");
            audit::write_adversarial_sidecar(&records, &data.vocabulary, &sidecar)?;
            ctx.write_stage_manifest(
                "audit-adversarial",
                &[ctx.dataset_path(), ctx.path("model_attentive.json")],
                &[csv, sidecar],
            )?;
        }
        AuditKind::Logodds => {
            let table = load_lr_table(ctx)?;
            let eval = audit::logodds_swap_eval(
                &model,
                &docs,
                &table,
                ctx.config.audit.logodds_abs,
            )?;
            let csv = dir.join("logodds_swap.csv");
            audit::write_swap_csv(&eval, &csv)?;
            let sidecar = dir.join("logodds_swap.jsonl");
            audit::write_swap_sidecar(&eval, &data.vocabulary, &sidecar)?;
            let eval_path = write_variant_eval(ctx, "logodds-swap", &data, eval.swapped.clone())?;
            ctx.write_stage_manifest(
                "audit-logodds",
                &[
                    ctx.dataset_path(),
                    ctx.path("model_attentive.json"),
                    ctx.path("lr_model.json"),
                ],
                &[csv, sidecar, eval_path],
            )?;
        }
    }
    Ok(())
}

/// Sidecar row shape shared by the adversarial and log-odds JSONL files.
#[derive(Deserialize)]
struct SidecarRow {
    id: String,
    tokens: Vec<String>,
    alpha_hat: Vec<f64>,
    alpha_cf: Vec<f64>,
    yhat: f64,
    yhat_cf: f64,
}

fn heatmaps_from_sidecar(path: &Path, top: usize) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<(f64, SidecarRow)> = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: SidecarRow = serde_json::from_str(line)?;
        let divergence = jsd(&row.alpha_hat, &row.alpha_cf)?;
        rows.push((divergence, row));
    }
    rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    rows.truncate(top);
    rows.iter()
        .map(|(_, row)| {
            let doc = HeatmapDoc {
                id: row.id.clone(),
                tokens: row.tokens.clone(),
                diffs: row
                    .alpha_cf
                    .iter()
                    .zip(&row.alpha_hat)
                    .map(|(c, o)| c - o)
                    .collect(),
                original_output: row.yhat,
                counterfactual_output: row.yhat_cf,
            };
            Ok(report::render_heatmap(&doc)?)
        })
        .collect()
}

pub fn report_stage(ctx: &Ctx) -> Result<()> {
    let figures = ctx.path("figures");
    let heatmaps = ctx.path("heatmaps");
    let tables = ctx.path("tables");
    for dir in [&figures, &heatmaps, &tables] {
        std::fs::create_dir_all(dir)?;
    }
    let mut artifacts: Vec<PathBuf> = Vec::new();
    let mut inputs: Vec<PathBuf> = Vec::new();

    // Density scatters from the audit CSVs.
    let scatter_jobs = [
        (
            "audit/permute.csv",
            "permutation",
            {
                let mut spec = ScatterSpec::new("median_dy", "max_attn");
                spec.x_label = "median output change".into();
                spec.y_label = "max attention".into();
                spec.class_field = Some("label".into());
                spec
            },
        ),
        (
            "audit/adversarial.csv",
            "adversarial",
            {
                let mut spec = ScatterSpec::new("eps_max_jsd", "max_attn");
                spec.x_label = "eps-max JSD".into();
                spec.y_label = "max attention".into();
                spec.x_range = (0.0, LN_2);
                spec
            },
        ),
        (
            "audit/logodds_swap.csv",
            "logodds_swap",
            {
                let mut spec = ScatterSpec::new("jsd", "dy");
                spec.x_label = "JSD(learned, log-odds)".into();
                spec.y_label = "output change".into();
                spec.x_range = (0.0, LN_2);
                spec
            },
        ),
    ];
    for (input, name, spec) in scatter_jobs {
        let csv = ctx.path(input);
        if !csv.exists() {
            eprintln!("warning: {} missing, skipping {name} figure", csv.display());
            continue;
        }
        inputs.push(csv.clone());
        for (class, svg) in report::render_scatter(&csv, &spec)? {
            let file = figures.join(format!("{name}_{}.svg", sanitize(&class)));
            std::fs::write(&file, svg)?;
            artifacts.push(file);
        }
    }

    // Token heatmaps for the most-divergent counterfactuals.
    for (sidecar, name, title) in [
        (
            "audit/adversarial.jsonl",
            "adversarial.html",
            "Original vs adversarial attention",
        ),
        (
            "audit/logodds_swap.jsonl",
            "logodds.html",
            "Original vs log-odds attention",
        ),
    ] {
        let path = ctx.path(sidecar);
        if !path.exists() {
            eprintln!("warning: {} missing, skipping {name}", path.display());
            continue;
        }
        inputs.push(path.clone());
        let fragments = heatmaps_from_sidecar(&path, 5)?;
        let file = heatmaps.join(name);
        std::fs::write(&file, report::heatmap_page(title, &fragments))?;
        artifacts.push(file);
    }

    // AUC summary across whichever variants have been evaluated.
    let mut rows: Vec<SummaryRow> = Vec::new();
    for variant in [
        "attentive",
        "inattentive",
        "logodds-swap",
        "logodds-trained",
        "lr",
    ] {
        let path = ctx.path(&format!("eval_{}.json", variant.replace('-', "_")));
        if !path.exists() {
            eprintln!("warning: no evaluation for variant {variant:?}, row omitted");
            continue;
        }
        inputs.push(path.clone());
        let record: VariantEval = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        rows.push(SummaryRow {
            variant: record.variant,
            per_label_auc: record.eval.per_label_auc,
            macro_auc: record.eval.macro_auc,
            test_split_hash: record.test_split_hash,
        });
    }
    if !rows.is_empty() {
        let (csv, html) = report::summary_table(&rows)?;
        let csv_path = tables.join("summary.csv");
        std::fs::write(&csv_path, csv)?;
        artifacts.push(csv_path);
        let html_path = tables.join("summary.html");
        std::fs::write(&html_path, html)?;
        artifacts.push(html_path);
    }

    // The final manifest covers every artifact the pipeline left under the
    // run directory, not just the report's own files.
    let all_artifacts = walk_artifacts(ctx.out())?;
    let manifest = report::write_manifest(ctx.out(), &all_artifacts, &inputs)?;
    let mut outputs = artifacts;
    outputs.push(manifest);
    ctx.write_stage_manifest("report", &inputs, &outputs)?;
    Ok(())
}

/// Every file under the run directory except the manifests themselves.
fn walk_artifacts(root: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if !path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with("manifest.json"))
            {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn sanitize(class: &str) -> String {
    class
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect()
}

pub fn run_all(ctx: &Ctx) -> Result<()> {
    if matches!(ctx.config.data, DataSource::Synthetic(_)) {
        gen_data(ctx)?;
    }
    train_model(ctx, TrainVariant::Attentive)?;
    train_model(ctx, TrainVariant::Inattentive)?;
    train_lr_stage(ctx)?;
    train_logodds_stage(ctx)?;
    audit_stage(ctx, AuditKind::Gradients)?;
    audit_stage(ctx, AuditKind::Permute)?;
    audit_stage(ctx, AuditKind::Adversarial)?;
    audit_stage(ctx, AuditKind::Logodds)?;
    report_stage(ctx)?;
    Ok(())
}

pub fn stage_error_hint(err: &anyhow::Error) -> Option<String> {
    let text = format!("{err:#}");
    if text.contains("not found; run the") {
        Some("stages compose through files; run earlier stages or use `all`".into())
    } else {
        None
    }
}
