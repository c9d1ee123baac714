use std::path::PathBuf;
use std::process::ExitCode;

use carebi_cli::config;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "carebi", version, about = "CareBI scale construction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides paths.out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key.path=value` config overrides, e.g. `efa.n_sims=200`. Repeatable.
    #[arg(long = "stage-overrides", global = true, value_name = "KEY=VALUE")]
    stage_overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Recode the raw extract into the item response matrix.
    Prep,
    /// Polychoric matrix, KMO and DWLS weights.
    Corr,
    /// Parallel analysis, minres + oblimin, retention table.
    Efa,
    /// Bifactor DWLS fit and omega.
    Cfa,
    /// Regression general-factor scores on 0-100.
    Score,
    /// Burden thresholds and categories.
    Classify,
    /// Cluster-robust outcome models.
    Validate,
    /// Write a synthetic raw extract with known structure.
    Simulate,
    /// Consolidated markdown report.
    Report,
    /// Every stage in the configured order.
    Run,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Prep => "prep",
            Command::Corr => "corr",
            Command::Efa => "efa",
            Command::Cfa => "cfa",
            Command::Score => "score",
            Command::Classify => "classify",
            Command::Validate => "validate",
            Command::Simulate => "simulate",
            Command::Report => "report",
            Command::Run => "run",
        }
    }
}

fn print_written(stage: &str, files: &[String]) {
    if files.is_empty() {
        eprintln!("{stage}: skipped");
    }
    for f in files {
        eprintln!("{stage}: wrote {f}");
    }
}

fn execute(cli: &Cli) -> carebi_cli::error::Result<()> {
    let ctx = config::load(cli.config.as_deref(), &cli.stage_overrides, cli.seed, cli.out.as_deref())?;
    match cli.command {
        Command::Run => carebi_cli::run_pipeline(&ctx, print_written),
        c => carebi_cli::run_stage(c.name(), &ctx).map(|w| print_written(c.name(), &w)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(2)
        }
    }
}
