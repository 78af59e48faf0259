use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crsearch::Strategy;
use crsearch_cli::synthesize::BehaviorArg;
use crsearch_cli::{ablate, evaluate, exit_code, ingest, search, synthesize, UsageError};

#[derive(Parser)]
#[command(name = "crsearch", version, about = "Reward-guided search for conversational recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a conversation corpus and derive evaluation turns.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop ground-truth items already mentioned earlier in the conversation.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        dedupe: bool,
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Run a search strategy on every turn and write traces and rankings.
    Search {
        #[arg(long)]
        turns: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_concurrency: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Compute Recall/NDCG/MRR for one or more run directories.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        rankings: Vec<PathBuf>,
        #[arg(long)]
        turns: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10,50")]
        cuts: Vec<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build instruction data for the simulated user.
    Synthesize {
        #[arg(long)]
        turns: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = BehaviorArg::Both)]
        behavior: BehaviorArg,
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Compare search strategies on the synthetic oracle world.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_concurrency: Option<usize>,
    },
}

fn parse_strategy(s: Option<String>) -> Result<Option<Strategy>, UsageError> {
    s.map(|s| Strategy::parse(&s).ok_or_else(|| UsageError(format!("unknown strategy {s:?}")))).transpose()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { corpus, catalog, out, dedupe, split } => {
            let m = ingest::run(&ingest::IngestArgs { corpus, catalog, out_dir: out, dedupe, split })?;
            println!("{}", m.summary());
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Search { turns, config, out, strategy, seed, max_concurrency, limit } => {
            let strategy = parse_strategy(strategy)?;
            let m = search::run(&search::SearchArgs {
                turns,
                config,
                out_dir: out,
                strategy,
                seed,
                max_concurrency,
                limit,
            })?;
            println!(
                "{} turns searched with {}; {} gateway calls ({} scoring, {} cache hits)",
                m.turns.len(),
                m.strategy,
                m.calls.total_gateway_calls(),
                m.calls.score,
                m.calls.score_cache_hits
            );
            let failed = m.failed_turns();
            if failed > 0 {
                anyhow::bail!("{failed} turns aborted; see the traces for details");
            }
        }
        Command::Evaluate { rankings, turns, cuts, runs, out } => {
            let (_, table) = evaluate::run(&evaluate::EvaluateArgs { run_dirs: rankings, turns, cuts, runs, out })?;
            print!("{table}");
        }
        Command::Synthesize { turns, catalog, config, out, behavior, stop_after } => {
            let m = synthesize::run(&synthesize::SynthesizeArgs {
                turns,
                catalog,
                config,
                out_dir: out,
                behavior,
                stop_after,
            })?;
            let scoring: usize = m.per_turn.iter().map(|t| t.scoring_examples).sum();
            let critiquing: usize = m.per_turn.iter().map(|t| t.critiquing_examples).sum();
            println!(
                "{} turns ({} resumed): {scoring} scoring and {critiquing} critiquing examples, {} teacher calls{}",
                m.per_turn.len(),
                m.resumed_turns,
                m.teacher_calls,
                if m.complete { "" } else { " (incomplete)" }
            );
        }
        Command::Ablate { config, out, max_concurrency } => {
            let (_, table) = ablate::run(&ablate::AblateArgs { config, out_dir: out, max_concurrency })?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
