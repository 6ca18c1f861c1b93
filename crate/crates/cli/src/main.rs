//! Command-line driver: train attention-based text classifiers on a JSONL or
//! synthetic corpus, audit whether their attention weights behave like
//! explanations, and render static reports.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 runtime error.

mod config;
mod stages;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use attnaudit::models::{AttentionKind, EncoderKind};
use config::RunConfig;
use stages::{AuditKind, Ctx, TrainVariant};

#[derive(Parser)]
#[command(
    name = "attnaudit",
    version,
    about = "Train small attention text classifiers and audit attention-as-explanation"
)]
struct Cli {
    /// JSON run configuration; defaults are a desk-scale synthetic run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for all stage artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Encoder architecture override.
    #[arg(long, global = true, value_enum)]
    encoder: Option<EncoderArg>,

    /// Attention override for the `train` stage.
    #[arg(long, global = true, value_enum)]
    attention: Option<AttentionArg>,

    /// Worker threads for the audit fan-out (1 = fully sequential).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Adversarial output-change budget.
    #[arg(long, global = true)]
    eps: Option<f64>,

    /// Gradient attribution measure.
    #[arg(long, global = true, value_enum)]
    grad_measure: Option<GradMeasureArg>,

    /// Apply |beta| (true) or signed coefficients (false) in log-odds scores.
    #[arg(long, global = true)]
    logodds_abs: Option<bool>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Bilstm,
    Cnn,
    Proj,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttentionArg {
    Additive,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum GradMeasureArg {
    Gxi,
    L2,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and vocabulary.
    GenData,
    /// Dump the dataset vocabulary as a JSON word array.
    BuildVocab,
    /// Train the encoder named in the config (attentive by default).
    Train,
    /// Train the bag-of-words logistic regression baseline.
    TrainLr,
    /// Train a model with attention frozen to the log-odds distribution.
    TrainLogodds,
    /// Run one audit experiment against the trained attentive model.
    Audit {
        #[command(subcommand)]
        which: AuditCommand,
    },
    /// Render figures, heatmaps and the summary table from audit outputs.
    Report,
    /// Run the whole pipeline end to end.
    All,
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Kendall correlation between attention and gradient attribution.
    Gradients,
    /// Median output change under random attention permutations.
    Permute,
    /// Adversarial attention search within the output-change budget.
    Adversarial,
    /// Log-odds attention substitution at prediction time.
    Logodds,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };

    let ctx = match resolve(&cli) {
        Ok(ctx) => ctx,
        Err(err) => {
            eprintln!("error[config]: {err:#}");
            return 1;
        }
    };

    match execute(&ctx, &cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error[runtime]: {err:#}");
            if let Some(hint) = stages::stage_error_hint(&err) {
                eprintln!("hint: {hint}");
            }
            2
        }
    }
}

fn resolve(cli: &Cli) -> anyhow::Result<Ctx> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(encoder) = cli.encoder {
        config.encoder.kind = match encoder {
            EncoderArg::Bilstm => EncoderKind::Bilstm,
            EncoderArg::Cnn => EncoderKind::Cnn,
            EncoderArg::Proj => EncoderKind::Projection,
        };
    }
    if let Some(attention) = cli.attention {
        config.encoder.attention = match attention {
            AttentionArg::Additive => AttentionKind::Additive,
            AttentionArg::None => AttentionKind::None,
        };
    }
    if let Some(jobs) = cli.jobs {
        config.audit.jobs = jobs.max(1);
    }
    if let Some(eps) = cli.eps {
        config.audit.adversarial.epsilon = eps;
    }
    if let Some(measure) = cli.grad_measure {
        config.audit.grad_measure = match measure {
            GradMeasureArg::Gxi => attnaudit::audit::GradientMeasure::GradTimesInput,
            GradMeasureArg::L2 => attnaudit::audit::GradientMeasure::L2Norm,
        };
    }
    if let Some(use_abs) = cli.logodds_abs {
        config.audit.logodds_abs = use_abs;
    }
    config.validate()?;
    Ctx::new(config)
}

fn execute(ctx: &Ctx, command: &Command) -> anyhow::Result<()> {
    match command {
        Command::GenData => stages::gen_data(ctx),
        Command::BuildVocab => stages::build_vocab(ctx),
        Command::Train => {
            let variant = match ctx.config.encoder.attention {
                AttentionKind::None => TrainVariant::Inattentive,
                _ => TrainVariant::Attentive,
            };
            stages::train_model(ctx, variant)
        }
        Command::TrainLr => stages::train_lr_stage(ctx),
        Command::TrainLogodds => stages::train_logodds_stage(ctx),
        Command::Audit { which } => {
            let kind = match which {
                AuditCommand::Gradients => AuditKind::Gradients,
                AuditCommand::Permute => AuditKind::Permute,
                AuditCommand::Adversarial => AuditKind::Adversarial,
                AuditCommand::Logodds => AuditKind::Logodds,
            };
            stages::audit_stage(ctx, kind)
        }
        Command::Report => stages::report_stage(ctx),
        Command::All => stages::run_all(ctx),
    }
}
