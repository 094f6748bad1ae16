//! `paneval`: train and apply a pairwise dialogue-quality evaluator learned
//! from noisy judge labels.
//!
//! Pipeline: `simulate` (or your own corpus) -> `prepare` -> `embed` ->
//! `train` -> `eval` / `score`. One JSON config file drives everything; any
//! field can be overridden inline with its dotted path, e.g.
//! `paneval --config run.json --train.epochs 12 train ...`.
//!
//! Exit codes: 0 success, 2 bad config or inputs, 3 endpoint failure,
//! 4 numeric failure.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::Ctx;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "paneval", version, about, max_term_width = 100)]
struct Cli {
    /// JSON config file; dotted flags such as `--train.epochs 12` override
    /// individual fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root seed; subsystem seeds derive from it unless set explicitly.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Write output here (with a `.meta.json` sidecar) instead of stdout.
    /// `train`, `embed`, and `simulate` require it.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Suppress progress notes on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter and balance a preference-label file.
    Prepare {
        /// Labels to prepare (JSON lines).
        #[arg(long)]
        labels: PathBuf,
        /// Labels from the position-swapped rerun; enables the consistency
        /// filter.
        #[arg(long)]
        swaps: Option<PathBuf>,
        /// Dialogue texts (JSON lines); enables the length-difference filter.
        #[arg(long)]
        dialogues: Option<PathBuf>,
    },
    /// Fetch dialogue embeddings into a binary store.
    Embed {
        /// Dialogue texts to embed (JSON lines).
        #[arg(long)]
        dialogues: PathBuf,
    },
    /// Fit quality heads and judge reliabilities.
    Train {
        /// Preference labels (JSON lines).
        #[arg(long)]
        labels: PathBuf,
        /// Embedding store covering every item in the labels.
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Evaluate a model against gold data under one protocol.
    Eval {
        /// Trained model file.
        #[arg(long)]
        model: PathBuf,
        /// Embedding store covering the gold items.
        #[arg(long)]
        embeddings: PathBuf,
        /// Which metrics to compute, and therefore what `--gold` must hold:
        /// a JSON object of id to score (rating) or labels (pairwise, dims).
        #[arg(long, value_enum)]
        protocol: Protocol,
        /// Gold data path.
        #[arg(long)]
        gold: PathBuf,
    },
    /// Emit item scores or pair decisions as JSON lines.
    Score {
        /// Trained model file.
        #[arg(long)]
        model: PathBuf,
        /// Embedding store holding the items to score.
        #[arg(long)]
        embeddings: PathBuf,
        /// Comma-separated item ids (default: every stored item).
        #[arg(long)]
        ids: Option<String>,
        /// Decide the pairs of this labels file instead of scoring items.
        #[arg(long, value_name = "LABELS")]
        pairs_from: Option<PathBuf>,
    },
    /// Generate a synthetic preference corpus with its ground truth.
    Simulate,
}

/// Evaluation protocol; decides the gold format and the report sections.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Protocol {
    /// Pearson/Spearman of model scores against real-valued gold ratings.
    Rating,
    /// Pairwise decision accuracy (with and without ties) on one head.
    Pairwise,
    /// Per-dimension decision accuracy across every head the model carries.
    Dims,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run() -> Result<(), CliError> {
    let argv: Vec<String> = std::env::args().collect();
    let (plain, mut overrides) = config::extract_dotted_flags(argv)?;
    let cli = Cli::parse_from(plain);

    // --seed is sugar for `--seed N` at the config root; apply it before the
    // dotted flags so an explicit `--seed.…` path could still win (none exist
    // today, but the precedence rule stays uniform: later flags win).
    if let Some(seed) = cli.seed {
        overrides.insert(0, ("seed".to_string(), serde_json::Value::from(seed)));
    }
    let resolved = config::resolve(cli.config.as_deref(), &overrides)?;
    let ctx = Ctx {
        resolved,
        quiet: cli.quiet,
        out: cli.out,
    };

    match &cli.command {
        Command::Prepare {
            labels,
            swaps,
            dialogues,
        } => commands::cmd_prepare(&ctx, labels, swaps.as_deref(), dialogues.as_deref()),
        Command::Embed { dialogues } => commands::cmd_embed(&ctx, dialogues),
        Command::Train { labels, embeddings } => commands::cmd_train(&ctx, labels, embeddings),
        Command::Eval {
            model,
            embeddings,
            protocol,
            gold,
        } => commands::cmd_eval(&ctx, model, embeddings, *protocol, gold),
        Command::Score {
            model,
            embeddings,
            ids,
            pairs_from,
        } => commands::cmd_score(
            &ctx,
            model,
            embeddings,
            ids.as_deref(),
            pairs_from.as_deref(),
        ),
        Command::Simulate => commands::cmd_simulate(&ctx),
    }
}
