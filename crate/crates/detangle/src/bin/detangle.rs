use std::path::PathBuf;

use clap::{Parser, Subcommand};

use detangle::commands::{self, Ctx, Protocol};
use detangle::config::load_config;
use detangle::eval::AttributionRule;
use detangle::train::TrainMode;

#[derive(Parser)]
#[command(
    name = "detangle",
    version,
    about = "Train and evaluate style encoders that separate authorial style from topical content"
)]
struct Cli {
    /// TOML configuration file (defaults apply when omitted)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides every configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts and manifests
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for parallel sections (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus plus its ground truth
    Gen,
    /// Train a style encoder on a JSONL corpus
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// detangle (content-aware negatives) or simple (plain contrastive)
        #[arg(long, value_parser = parse_mode)]
        mode: TrainMode,
        /// Continue from an existing checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Comma-separated learning rates; best validation accuracy wins
        #[arg(long, value_delimiter = ',')]
        lr_grid: Option<Vec<f64>>,
    },
    /// Evaluate a checkpoint or an untrained encoder
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate the untrained (frozen) encoder instead of a checkpoint
        #[arg(long)]
        frozen: bool,
        #[arg(long, default_value = "global", value_parser = parse_protocol)]
        protocol: Protocol,
        /// Comma-separated k list for the topk protocol (overrides config)
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// nearest_doc or centroid (overrides config)
        #[arg(long, value_parser = parse_rule)]
        rule: Option<AttributionRule>,
        /// Write a per-query predictions CSV (global protocol only)
        #[arg(long)]
        dump_predictions: bool,
    },
    /// Side-by-side model table from metrics JSON reports
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Finite-difference check of every differentiable op
    Gradcheck,
    /// Entanglement × mode × seed sweep from the config's sweep section
    Sweep,
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    s.parse().map_err(|e: detangle::Error| e.to_string())
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse().map_err(|e: detangle::Error| e.to_string())
}

fn parse_rule(s: &str) -> Result<AttributionRule, String> {
    s.parse().map_err(|e: detangle::Error| e.to_string())
}

fn run(cli: Cli) -> detangle::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| detangle::Error::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.override_seed(s);
    }
    let ctx = Ctx { cfg, config_path: cli.config, out_dir: cli.out };
    match cli.command {
        Command::Gen => commands::cmd_gen(&ctx),
        Command::Train { corpus, mode, resume, lr_grid } => {
            commands::cmd_train(&ctx, &corpus, mode, resume.as_deref(), lr_grid.as_deref())
        }
        Command::Eval { corpus, checkpoint, frozen, protocol, k, rule, dump_predictions } => {
            commands::cmd_eval(
                &ctx,
                &corpus,
                checkpoint.as_deref(),
                frozen,
                protocol,
                k.as_deref(),
                rule,
                dump_predictions,
            )
        }
        Command::Compare { reports } => commands::cmd_compare(&ctx, &reports),
        Command::Gradcheck => commands::cmd_gradcheck(&ctx),
        Command::Sweep => commands::cmd_sweep(&ctx),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
