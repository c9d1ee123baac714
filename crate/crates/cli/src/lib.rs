//! Staged command-line pipeline around the `carebi` core.

pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod stages;

use config::Loaded;
use error::{CliError, Result};

/// Run one stage by name, returning the artifacts it wrote.
pub fn run_stage(name: &str, ctx: &Loaded) -> Result<Vec<String>> {
    match name {
        "simulate" => stages::simulate(ctx),
        "prep" => stages::prep(ctx),
        "corr" => stages::corr(ctx),
        "efa" => stages::efa(ctx),
        "cfa" => stages::cfa(ctx),
        "score" => stages::score(ctx),
        "classify" => stages::classify(ctx),
        "validate" => stages::validate(ctx),
        "report" => report::report(ctx),
        other => Err(CliError::Config(format!("unknown stage `{other}`"))),
    }
}

/// Run the configured stage list in order. `validate` is skipped when no
/// outcomes are configured.
pub fn run_pipeline(ctx: &Loaded, mut log: impl FnMut(&str, &[String])) -> Result<()> {
    for name in &ctx.config.stages {
        if name == "validate" && ctx.config.validate.outcomes.is_empty() {
            log(name, &[]);
            continue;
        }
        let written = run_stage(name, ctx)?;
        log(name, &written);
    }
    Ok(())
}
