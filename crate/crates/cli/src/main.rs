//! `nlidiv`: score response sets, evaluate metrics against annotations,
//! run diversity threshold generation and collate reports.

mod commands;
mod config;

use std::io::Write;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde_json::json;

use commands::evaluate::EvaluateArgs;
use commands::relevancy::RelevancyArgs;
use commands::report::ReportArgs;
use commands::score::ScoreArgs;
use commands::threshold::ThresholdArgs;
use config::{merge, ConfigFile, Context, Globals};

#[derive(Parser)]
#[command(
    name = "nlidiv",
    version,
    about = "NLI-based diversity metrics for dialogue response sets"
)]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every response set in a dataset
    Score(ScoreArgs),
    /// Correlate metric scores with the dataset annotations
    EvaluateMetric(EvaluateArgs),
    /// Run diversity threshold generation over conversations
    Threshold(ThresholdArgs),
    /// Compare starting and ending sets against multiple references
    Relevancy(RelevancyArgs),
    /// Collate result documents into markdown tables
    Report(ReportArgs),
}

fn run(cli: Cli) -> Result<()> {
    let file = ConfigFile::load(cli.globals.config.as_deref())?;
    let mut globals: Globals = merge(&cli.globals, file.globals.clone())?;
    globals.strict = cli.globals.strict;
    globals.verbose = cli.globals.verbose;
    let ctx = Context::new(globals)?;

    let jobs = ctx.globals.jobs;
    let artifacts = nlidiv_core::par::with_jobs(jobs, || match &cli.command {
        Command::Score(a) => commands::score::run(&ctx, &merge(a, file.section("score"))?),
        Command::EvaluateMetric(a) => commands::evaluate::run(&ctx, &merge(a, file.section("evaluate_metric"))?),
        Command::Threshold(a) => commands::threshold::run(&ctx, &merge(a, file.section("threshold"))?),
        Command::Relevancy(a) => commands::relevancy::run(&ctx, &merge(a, file.section("relevancy"))?),
        Command::Report(a) => commands::report::run(&ctx, &merge(a, file.section("report"))?),
    })?;
    if let Some(dir) = &ctx.globals.out {
        artifacts.write_to(dir)?;
    }
    std::io::stdout().write_all(&artifacts.stdout)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.globals.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<nlidiv_core::Error>())
                .map_or("cli", nlidiv_core::Error::kind);
            let message = format!("{e:#}");
            eprintln!("error: {message}");
            eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
            ExitCode::FAILURE
        }
    }
}
