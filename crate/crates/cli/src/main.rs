mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use sha2::{Digest, Sha256};
use tactile_eval::corpus::Registry;
use tactile_eval::editing::TemplateRegistry;

use config::Settings;

#[derive(Debug, Parser)]
#[command(name = "tactile-eval", about = "Tactile graphic quality probes and guided edits")]
struct Cli {
    /// Flat TOML config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ballots and gold key → consensus-labeled binary records.
    Aggregate,
    /// Embeds every image and option prompt the records need into the store.
    Features,
    /// Trains one probe per option.
    Train {
        /// Only this task (e.g. F1QL).
        #[arg(long)]
        task: Option<String>,
        /// Only this option of --task.
        #[arg(long)]
        option: Option<String>,
    },
    /// Scores a split and writes per-option/task/family/summary CSVs.
    Eval,
    /// Issue probabilities for every option of one pair and task.
    Score {
        #[arg(long)]
        pair: String,
        #[arg(long)]
        task: String,
    },
    /// Edits the top (or given) issue of one pair and writes a job directory.
    Edit {
        #[arg(long)]
        pair: String,
        #[arg(long)]
        task: String,
        #[arg(long)]
        option: Option<String>,
    },
    /// Recomputes before/after probabilities of an existing job.
    Rescore {
        /// Job directory written by `edit` or `study`.
        #[arg(long)]
        job: PathBuf,
    },
    /// Selects high-confidence test records and edits each one.
    Study,
    /// Training curves and best-epoch summary from a checkpoint directory.
    Report,
}

fn checksum(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

fn version() -> &'static str {
    let v = format!(
        "{} (registry sha256:{}, templates sha256:{})",
        env!("CARGO_PKG_VERSION"),
        checksum(Registry::builtin_source()),
        checksum(TemplateRegistry::builtin_source()),
    );
    Box::leak(v.into_boxed_str())
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match Cli::command().version(version()).try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            error_line("usage", e.to_string().lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            error_line("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_line("failed", &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = match &cli.config {
        Some(path) => cli.settings.overlay(Settings::from_file(path)?),
        None => cli.settings,
    };
    if let Some(n) = settings.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Aggregate => commands::aggregate(&settings, &mut out),
        Command::Features => commands::features(&settings, &mut out),
        Command::Train { task, option } => commands::train(&settings, task.as_deref(), option.as_deref(), &mut out),
        Command::Eval => commands::eval(&settings, &mut out),
        Command::Score { pair, task } => commands::score(&settings, &pair, &task, &mut out),
        Command::Edit { pair, task, option } => commands::edit(&settings, &pair, &task, option.as_deref(), &mut out),
        Command::Rescore { job } => commands::rescore(&settings, &job, &mut out),
        Command::Study => commands::study(&settings, &mut out),
        Command::Report => commands::report(&settings, &mut out),
    }
}
