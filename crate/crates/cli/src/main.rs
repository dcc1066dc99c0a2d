use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use judge_audit::gateway::{ChatTransport, HttpTransport, JudgeConfig, Mode};
use judge_audit::manifest::RunManifest;
use judge_audit::pipeline::{self, Context, PipelineError};

/// Reliability diagnostics for LLM judges: tournament transitivity and
/// conformal prediction sets.
#[derive(Debug, Parser)]
#[command(name = "judge-audit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Override the manifest's mode.
    #[arg(long, global = true)]
    mode: Option<Mode>,

    /// Override the manifest's split seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the corpus path.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,

    /// Keep only the first N documents.
    #[arg(long, global = true)]
    docs: Option<usize>,

    /// Keep only these systems (comma separated, in this order).
    #[arg(long, global = true, value_delimiter = ',')]
    systems: Option<Vec<String>>,

    /// Send every judge to this endpoint.
    #[arg(long, global = true)]
    endpoint: Option<String>,

    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the corpus and write the selected subsample with its call budget.
    Ingest,
    /// Collect pairwise verdicts.
    RunPairwise,
    /// Collect direct 1-5 scores.
    RunScoring,
    /// Violation rates and rankings from the verdict store.
    AnalyzeTransitivity,
    /// Conformal coverage, set size and width diagnostics from the score store.
    AnalyzeConformal,
    /// Run every analysis that has a store and write summary.json.
    Report,
}

fn load(cli: &Cli) -> Result<Context, PipelineError> {
    let path = cli
        .manifest
        .as_ref()
        .ok_or_else(|| PipelineError::Validation("--manifest is required".into()))?;
    let mut m = RunManifest::load(path)?;
    if let Some(mode) = cli.mode {
        m.mode = mode;
    }
    if let Some(seed) = cli.seed {
        m.seed = seed;
    }
    if let Some(corpus) = &cli.corpus {
        m.corpus = std::path::absolute(corpus).map_err(|source| PipelineError::Io {
            path: corpus.clone(),
            source,
        })?;
        m.corpus_digest = None;
    }
    if let Some(docs) = cli.docs {
        m.docs = Some(docs);
    }
    if let Some(systems) = &cli.systems {
        m.systems = Some(systems.clone());
    }
    if let Some(endpoint) = &cli.endpoint {
        for judge in &mut m.judges {
            judge.endpoint_url = endpoint.clone();
        }
    }
    Context::load(m)
}

fn http_transport(judge: &JudgeConfig) -> Result<Box<dyn ChatTransport>, PipelineError> {
    if judge.endpoint_url.is_empty() {
        return Err(PipelineError::Validation(format!(
            "judge {} has no endpoint_url for live mode",
            judge.judge_id
        )));
    }
    let t = HttpTransport::from_env(&judge.endpoint_url, Duration::from_secs(judge.timeout_secs))
        .map_err(|e| PipelineError::Validation(e.to_string()))?;
    Ok(Box::new(t))
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let ctx = load(cli)?;
    let out = ctx.layout().0;
    match cli.command {
        Command::Ingest => {
            let s = pipeline::ingest(&ctx)?;
            println!(
                "{} docs, {} systems, {} instances; budget {} pairwise + {} scoring calls",
                s.docs,
                s.systems.len(),
                s.instances,
                s.budget.pairwise_calls,
                s.budget.scoring_calls
            );
        }
        Command::RunPairwise | Command::RunScoring => {
            let s = if matches!(cli.command, Command::RunPairwise) {
                pipeline::run_pairwise(&ctx, Some(&http_transport))?
            } else {
                pipeline::run_scoring(&ctx, Some(&http_transport))?
            };
            println!(
                "{} requests: {} cached, {} sent, {} records, {} unparseable, {} transport failures",
                s.requests, s.cache_hits, s.network_calls, s.records, s.unparseable, s.transport_failures
            );
        }
        Command::AnalyzeTransitivity => {
            let r = pipeline::analyze_transitivity(&ctx)?;
            for row in &r.stats {
                println!(
                    "{} {}: mean {:.3}, {:.1}% docs violated, max {:.3}, median {:.3}",
                    row.judge_id, row.criterion, row.mean, row.pct_docs_with_violation, row.max, row.median
                );
            }
        }
        Command::AnalyzeConformal => {
            let r = pipeline::analyze_conformal(&ctx)?;
            println!("{} cells, {} skipped", r.cells.len(), r.skipped.len());
        }
        Command::Report => {
            pipeline::report(&ctx)?;
        }
    }
    println!("reports in {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
